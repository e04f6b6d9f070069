#include "cli.hpp"

int main(int argc, char **argv)
{
  return psm::cli::run_cli(argc, argv);
}
