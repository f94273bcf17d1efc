#include "evdeblur/cli.hpp"

int main(int argc, char** argv) { return evdeblur::cli_main(argc, argv); }
