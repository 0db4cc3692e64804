#include "geossl/cli.hpp"

int main(int argc, char** argv) { return geossl::cli::run(argc, argv); }
