#include "maeloc/signal/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <mutex>

#include "maeloc/error.hpp"

namespace maeloc::signal {
namespace {

// FFTW planning is not thread-safe, execution with the new-array interface
// is. Plans are created once per size under a lock and never destroyed.
struct PlanPair {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

const PlanPair& plans_for(std::size_t nfft) {
  static std::mutex mutex;
  static std::map<std::size_t, PlanPair> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(nfft);
  if (it != cache.end()) return it->second;

  const int n = static_cast<int>(nfft);
  std::vector<double> real(nfft);
  std::vector<std::complex<double>> cplx(nfft / 2 + 1);
  auto* c = reinterpret_cast<fftw_complex*>(cplx.data());
  constexpr unsigned kFlags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  PlanPair p;
  p.forward = fftw_plan_dft_r2c_1d(n, real.data(), c, kFlags);
  p.inverse = fftw_plan_dft_c2r_1d(n, c, real.data(), kFlags | FFTW_PRESERVE_INPUT);
  return cache.emplace(nfft, p).first->second;
}

}  // namespace

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

Spectrum rfft(std::span<const double> x, std::size_t nfft) {
  if (nfft == 0 || x.size() > nfft) throw InvalidArgument("rfft: input longer than nfft");
  std::vector<double> buf(nfft, 0.0);
  std::copy(x.begin(), x.end(), buf.begin());
  Spectrum out(nfft / 2 + 1);
  fftw_execute_dft_r2c(plans_for(nfft).forward, buf.data(),
                       reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

std::vector<double> irfft(const Spectrum& spec, std::size_t nfft) {
  if (spec.size() != nfft / 2 + 1) throw InvalidArgument("irfft: spectrum size mismatch");
  Spectrum in = spec;
  std::vector<double> out(nfft);
  fftw_execute_dft_c2r(plans_for(nfft).inverse, reinterpret_cast<fftw_complex*>(in.data()),
                       out.data());
  const double scale = 1.0 / static_cast<double>(nfft);
  for (double& v : out) v *= scale;
  return out;
}

std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t len = a.size() + b.size() - 1;
  const std::size_t nfft = next_pow2(len);
  Spectrum fa = rfft(a, nfft);
  const Spectrum fb = rfft(b, nfft);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  std::vector<double> out = irfft(fa, nfft);
  out.resize(len);
  return out;
}

}  // namespace maeloc::signal
