#include "mmgrip/cli.hpp"

int main(int argc, char** argv) { return mmgrip::run_cli(argc, argv); }
