#include "cafe/kernels.hpp"

#include <cassert>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <mutex>

#if defined(__aarch64__)
#include <arm_neon.h>
#endif

namespace cafe::kernels {

namespace ref {

double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale(double* x, double a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

}  // namespace ref

#if defined(__x86_64__) || defined(_M_X64)
// Implemented in kernels_avx2.cpp (compiled with -mavx2 -mfma).
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scale(double* x, double a, std::size_t n);
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {

double dot(const double* a, const double* b, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
        acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
    }
    double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    float64x2_t av = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), av, vld1q_f64(x + i)));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void scale(double* x, double a, std::size_t n) {
    float64x2_t av = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(x + i, vmulq_f64(vld1q_f64(x + i), av));
    }
    for (; i < n; ++i) x[i] *= a;
}

}  // namespace neon
#endif

namespace {

struct Table {
    double (*dot)(const double*, const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*scale)(double*, double, std::size_t);
    Isa isa;
};

constexpr Table kScalarTable{&ref::dot, &ref::axpy, &ref::scale, Isa::scalar};

bool host_supports(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return true;
        case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
            return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
            return false;
#endif
        case Isa::neon:
#if defined(__aarch64__)
            return true;
#else
            return false;
#endif
    }
    return false;
}

Table table_for(Isa isa) {
    switch (isa) {
#if defined(__x86_64__) || defined(_M_X64)
        case Isa::avx2:
            return Table{&avx2::dot, &avx2::axpy, &avx2::scale, Isa::avx2};
#endif
#if defined(__aarch64__)
        case Isa::neon:
            return Table{&neon::dot, &neon::axpy, &neon::scale, Isa::neon};
#endif
        default:
            return kScalarTable;
    }
}

Isa pick_default() {
    if (const char* env = std::getenv("CAFE_KERNEL_ISA")) {
        if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
        if (std::strcmp(env, "avx2") == 0 && host_supports(Isa::avx2)) return Isa::avx2;
        if (std::strcmp(env, "neon") == 0 && host_supports(Isa::neon)) return Isa::neon;
        // Unknown or unsupported request: fall through to auto-detect.
    }
    if (host_supports(Isa::avx2)) return Isa::avx2;
    if (host_supports(Isa::neon)) return Isa::neon;
    return Isa::scalar;
}

Table g_table = kScalarTable;  // NOLINT: process-wide dispatch state
std::once_flag g_init_once;

const Table& dispatch() {
    std::call_once(g_init_once, [] { g_table = table_for(pick_default()); });
    return g_table;
}

}  // namespace

const char* name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "?";
}

Isa active() { return dispatch().isa; }

bool force(Isa isa) {
    if (!host_supports(isa)) return false;
    dispatch();  // make sure init has run so the override is not clobbered
    g_table = table_for(isa);
    return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    return dispatch().dot(a.data(), b.data(), a.size());
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
    assert(x.size() == y.size());
    dispatch().axpy(a, x.data(), y.data(), x.size());
}

void scale(std::span<double> x, double a) { dispatch().scale(x.data(), a, x.size()); }

double nrm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

}  // namespace cafe::kernels
