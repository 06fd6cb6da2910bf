// Command-line entry point; subcommands are wired up in the cli module.

#include <cstdio>

int main() {
    std::fprintf(stderr, "rtd: command layer not built yet\n");
    return 1;
}
