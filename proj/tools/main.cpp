#include <malloc.h>

#include "cli.hpp"

int main(int argc, char** argv) {
  // Training allocates and frees the same large buffers every step; keep
  // them on the heap instead of remapping (and re-faulting) each time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return m3sr::cli::run(argc, argv);
}
