#include "reenact/pipeline.hpp"

#include <iostream>

int main(int argc, char** argv) { return reenact::run_cli(argc, argv, std::cout, std::cerr); }
