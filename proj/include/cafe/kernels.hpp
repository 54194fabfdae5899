#pragma once

#include <cstddef>
#include <span>

// Dense double-precision inner loops shared by the model, curvature and
// aggregation code. Every operation has a scalar reference implementation;
// on x86 an AVX2+FMA variant and on aarch64 a NEON variant are selected at
// runtime when the CPU supports them. The active variant can be overridden
// with force() or the CAFE_KERNEL_ISA environment variable
// (scalar | avx2 | neon), checked once at first use.
//
// All variants are equivalence-tested against the scalar reference; results
// may differ in the last bits (different accumulation order), but a given
// process always uses one variant, so repeated runs are bit-identical.

namespace cafe::kernels {

enum class Isa { scalar, avx2, neon };

const char* name(Isa isa);

// Variant picked by dispatch (after env override, if any).
Isa active();

// Forces a variant; returns false (and leaves dispatch unchanged) if the
// host does not support it.
bool force(Isa isa);

// a . b   (sizes must match)
double dot(std::span<const double> a, std::span<const double> b);

// y += a * x   (sizes must match)
void axpy(double a, std::span<const double> x, std::span<double> y);

// x *= a
void scale(std::span<double> x, double a);

// Euclidean norm.
double nrm2(std::span<const double> x);

// Scalar reference kernels, also used directly by the equivalence tests.
namespace ref {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scale(double* x, double a, std::size_t n);
}  // namespace ref

}  // namespace cafe::kernels
