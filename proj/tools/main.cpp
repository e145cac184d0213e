// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include <iostream>
#include <string>
#include <vector>

#include "eres2net/cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return eres2net::run_cli(args, std::cout, std::cerr);
}
