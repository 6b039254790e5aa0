#include <cstdlib>
#include <cstring>
#include <string>

#include "palora/common.hpp"
#include "palora/kernels.hpp"

namespace palora::kernels {

namespace scalar {
extern const Ops kOps;
}
#if defined(__x86_64__) || defined(__i386__)
namespace avx2 {
extern const Ops kOps;
}
#endif

bool backend_available(Backend b) {
    switch (b) {
        case Backend::scalar:
            return true;
        case Backend::avx2:
#if defined(__x86_64__) || defined(__i386__)
            return __builtin_cpu_supports("avx2") != 0;
#else
            return false;
#endif
    }
    return false;
}

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
    }
    return "?";
}

Backend detect_backend() {
    if (const char* env = std::getenv("PALORA_KERNELS")) {
        const std::string want(env);
        if (want == "scalar") return Backend::scalar;
        if (want == "avx2") {
            if (!backend_available(Backend::avx2))
                throw ConfigError("PALORA_KERNELS=avx2 but AVX2 is unavailable on this CPU");
            return Backend::avx2;
        }
        throw ConfigError("unknown PALORA_KERNELS value: " + want);
    }
    if (backend_available(Backend::avx2)) return Backend::avx2;
    return Backend::scalar;
}

namespace {
Backend g_backend = detect_backend();
}

Backend active_backend() { return g_backend; }

void set_backend(Backend b) {
    if (!backend_available(b))
        throw ConfigError(std::string("backend not available: ") + backend_name(b));
    g_backend = b;
}

const Ops& ops_for(Backend b) {
    switch (b) {
        case Backend::scalar:
            return scalar::kOps;
        case Backend::avx2:
#if defined(__x86_64__) || defined(__i386__)
            return avx2::kOps;
#else
            break;
#endif
    }
    throw ConfigError("backend not compiled in");
}

const Ops& ops() { return ops_for(g_backend); }

size_t parse_thread_cap_env() {
    if (const char* env = std::getenv("PALORA_THREADS")) {
        const long v = std::atol(env);
        if (v >= 1) return static_cast<size_t>(v);
    }
    return 1;
}

}  // namespace palora::kernels

namespace palora {
size_t thread_cap() { return kernels::parse_thread_cap_env(); }
}  // namespace palora
