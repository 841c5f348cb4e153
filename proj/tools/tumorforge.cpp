#include <iostream>

#include "tumorforge/cli.hpp"

int main(int argc, char** argv) { return tumorforge::main_entry(argc, argv, std::cout, std::cerr); }
