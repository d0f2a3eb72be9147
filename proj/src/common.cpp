#include "nbvsdf/common.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace nbvsdf {

namespace {

#if defined(__GLIBC__)
// Batched evaluation allocates and frees multi-megabyte temporaries many
// times per step. Keeping them on the heap instead of fresh mmap regions
// avoids page-fault storms that otherwise dominate the runtime.
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
  return true;
}();
#endif

}  // namespace

Image resample(const Image& src, int width, int height) {
  if (src.width == width && src.height == height) return src;
  if (width <= 0 || height <= 0) throw Error("resample: empty target size");
  Image out(width, height, src.channels);
  const double sx = static_cast<double>(src.width) / width;
  const double sy = static_cast<double>(src.height) / height;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int x0 = static_cast<int>(x * sx), y0 = static_cast<int>(y * sy);
      const int x1 = std::max(x0 + 1, static_cast<int>((x + 1) * sx));
      const int y1 = std::max(y0 + 1, static_cast<int>((y + 1) * sy));
      for (int c = 0; c < src.channels; ++c) {
        double acc = 0.0;
        for (int yy = y0; yy < std::min(y1, src.height); ++yy)
          for (int xx = x0; xx < std::min(x1, src.width); ++xx) acc += src.at(xx, yy, c);
        const int n = (std::min(y1, src.height) - y0) * (std::min(x1, src.width) - x0);
        out.at(x, y, c) = static_cast<float>(acc / std::max(1, n));
      }
    }
  }
  return out;
}

int thread_count() {
  if (const char* env = std::getenv("NBVSDF_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  // Nested calls run inline on the calling worker.
  thread_local bool inside_worker = false;
  const auto workers = static_cast<std::size_t>(thread_count());
  if (workers <= 1 || n <= 1 || inside_worker) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    const std::size_t count = std::min(workers, n);
    for (std::size_t w = 0; w < count; ++w) {
      pool.emplace_back([&] {
        inside_worker = true;
        try {
          for (std::size_t i = next++; i < n; i = next++) body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace nbvsdf
