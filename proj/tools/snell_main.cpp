#include "snell/experiments.hpp"

int main(int argc, char** argv) { return snell::run_cli(argc, argv); }
