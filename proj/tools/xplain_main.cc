#include <iostream>

#include "xplain/cli/cli.h"

int main(int argc, char** argv) { return xplain::cli::Run(argc, argv, std::cout, std::cerr); }
