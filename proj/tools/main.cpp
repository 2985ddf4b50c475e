#include <iostream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "mexma/cli/cli.hpp"

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates and frees the same large activation buffers every step; keeping
  // them out of mmap and off the trim path saves roughly a fifth of the step time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
  std::vector<std::string> args(argv + 1, argv + argc);
  return mexma::cli::run(args, std::cout, std::cerr);
}
