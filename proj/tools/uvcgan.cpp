#include "uvcgan/cli.hpp"

int main(int argc, char** argv) { return uvcgan::run_cli(argc, argv); }
