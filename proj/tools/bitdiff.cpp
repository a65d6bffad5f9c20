// SPDX-License-Identifier: Apache-2.0
#include "bitdiff/cli.hpp"

int main(int argc, char** argv) { return bitdiff::run_cli(argc, argv); }
