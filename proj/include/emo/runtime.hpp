#pragma once

namespace emo {

/// Keeps large tape buffers on the heap instead of a fresh mmap per
/// allocation. Training allocates and frees many multi-hundred-KB matrices per
/// step; with glibc defaults that costs more system time than the arithmetic.
/// No effect on results. No-op outside glibc.
void configure_allocator();

}  // namespace emo
