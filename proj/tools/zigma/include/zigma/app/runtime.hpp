#pragma once

namespace zigma::app {

// Keeps large tensor buffers on the heap between steps. With the default
// glibc thresholds every multi-megabyte activation is an mmap/munmap pair and
// page faults take a third of the training time. No-op on other C libraries.
void tune_allocator();

}  // namespace zigma::app
