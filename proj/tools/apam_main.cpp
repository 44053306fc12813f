#include "commands.hpp"

int main(int argc, char** argv) {
  return cxr::cli::run(std::vector<std::string>(argv, argv + argc));
}
