#include "liedecomp/cli.hpp"

int main(int argc, char** argv) { return liedecomp::run_cli(argc, argv); }
