#include "fedss/cli.hpp"

int main(int argc, char** argv) { return fedss::cli_main(argc, argv); }
