#include "itect/parallel.hpp"

#include <cstdlib>
#include <string>

namespace itect {
namespace {

unsigned auto_threads() {
    if (const char* env = std::getenv("ITECT_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<unsigned>(v);
        } catch (...) {
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

std::atomic<unsigned> g_threads{0};

}  // namespace

unsigned worker_threads() {
    const unsigned n = g_threads.load();
    return n == 0 ? auto_threads() : n;
}

void set_worker_threads(unsigned n) { g_threads.store(n); }

}  // namespace itect
