#include <iostream>

#include "perfaug/cli.hpp"

int main(int argc, char** argv) { return perfaug::run(argc, argv, std::cout, std::cerr); }
