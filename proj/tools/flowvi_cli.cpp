// SPDX-License-Identifier: Apache-2.0
#include "flowvi/cli.hpp"

int main(int argc, char** argv) { return flowvi::run_cli(argc, argv); }
