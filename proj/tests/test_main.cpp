#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"
#include "kgt/instrument.hpp"

int main(int argc, char** argv) {
  kgt::configure_runtime();
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
