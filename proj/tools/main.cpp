#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  carbonopt::cli::Context ctx{std::cout, std::cerr, std::make_shared<carbonopt::llm::HttplibTransport>()};
  return carbonopt::cli::run(std::vector<std::string>(argv + 1, argv + argc), ctx);
}
