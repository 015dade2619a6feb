#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "escape/linalg.hpp"

int main(int argc, char** argv) {
    escape::gemm_threads() = 2;
    doctest::Context ctx;
    ctx.applyCommandLine(argc, argv);
    return ctx.run();
}
