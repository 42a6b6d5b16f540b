#include <iostream>

#include "emo/cli.hpp"

int main(int argc, char** argv) { return emo::run_cli(argc, argv, std::cout, std::cerr); }
