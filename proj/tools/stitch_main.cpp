#include "stitch/cli.hpp"

int main(int argc, char** argv) {
    return stitch::run_cli(argc, argv);
}
