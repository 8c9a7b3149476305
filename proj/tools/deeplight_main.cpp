#include "deeplight/cli.hpp"

int main(int argc, char** argv) { return deeplight::run_cli(argc, argv); }
