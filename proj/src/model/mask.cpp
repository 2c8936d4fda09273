#include "maeloc/model/mask.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "maeloc/error.hpp"

namespace maeloc::model {

std::string to_string(Setup setup) {
  switch (setup) {
    case Setup::s1a: return "1a";
    case Setup::s1b: return "1b";
    case Setup::s2a: return "2a";
    case Setup::s2b: return "2b";
  }
  return "?";
}

Setup parse_setup(const std::string& name) {
  if (name == "1a") return Setup::s1a;
  if (name == "1b") return Setup::s1b;
  if (name == "2a") return Setup::s2a;
  if (name == "2b") return Setup::s2b;
  throw InvalidArgument("unknown setup '" + name + "' (expected 1a, 1b, 2a or 2b)");
}

bool source_audio_known(Setup setup) { return setup == Setup::s1b || setup == Setup::s2b; }

std::string to_string(MaskMode mode) { return mode == MaskMode::fixed ? "fixed" : "random"; }

MaskMode parse_mask_mode(const std::string& name) {
  if (name == "fixed") return MaskMode::fixed;
  if (name == "random") return MaskMode::random;
  throw InvalidArgument("unknown mask mode '" + name + "' (expected fixed or random)");
}

bool MaskSpec::has_audio(int m) const { return std::binary_search(S.begin(), S.end(), m); }
bool MaskSpec::has_coord(int m) const { return std::binary_search(R.begin(), R.end(), m); }

int MaskSpec::mic_audio_count() const {
  return static_cast<int>(std::count_if(S.begin(), S.end(), [](int m) { return m >= 1; }));
}

void MaskSpec::validate() const {
  if (M < 1) throw InvalidArgument("mask: M must be >= 1");
  auto sorted_unique = [](const std::vector<int>& v) {
    return std::is_sorted(v.begin(), v.end()) && std::adjacent_find(v.begin(), v.end()) == v.end();
  };
  if (!sorted_unique(S) || !sorted_unique(R)) throw InvalidArgument("mask: S and R must be sorted sets");
  for (int m : S)
    if (m < 0 || m > M) throw InvalidArgument("mask: audio index out of range");
  for (int m : R)
    if (m < 1 || m > M) throw InvalidArgument("mask: the source coordinate is never an input");
  int both = 0;
  for (int m = 1; m <= M; ++m) {
    const bool a = has_audio(m), c = has_coord(m);
    if (!a && !c) throw InvalidArgument("mask: microphone " + std::to_string(m) + " has both inputs masked");
    both += a && c;
  }
  if (both < 5) throw InvalidArgument("mask: fewer than 5 microphones with both audio and coordinates");
}

MaskSpec setup_mask(int M, Setup setup, const std::vector<int>& known) {
  MaskSpec mask;
  mask.M = M;
  mask.setup = setup;
  if (source_audio_known(setup)) mask.S.push_back(0);
  for (int m = 1; m <= M; ++m) mask.S.push_back(m);
  if (setup == Setup::s1a || setup == Setup::s1b) {
    for (int m = 1; m <= M; ++m) mask.R.push_back(m);
  } else {
    mask.R = known;
    std::sort(mask.R.begin(), mask.R.end());
  }
  mask.validate();
  return mask;
}

MaskSpec sample_mask(int M, MaskMode mode, Setup setup, std::uint64_t seed) {
  if (M < 5) throw InvalidArgument("sample_mask: need at least 5 microphones");
  if (mode == MaskMode::fixed) {
    MaskSpec mask;
    mask.M = M;
    mask.setup = setup;
    if (source_audio_known(setup)) mask.S.push_back(0);
    for (int m = 1; m <= M; ++m) {
      mask.S.push_back(m);
      mask.R.push_back(m);
    }
    return mask;
  }
  std::mt19937_64 rng(seed);
  const int lo = std::max(5, M - 3);
  std::uniform_int_distribution<int> count(lo, M);
  std::vector<int> mics(static_cast<std::size_t>(M));
  std::iota(mics.begin(), mics.end(), 1);
  for (;;) {
    MaskSpec mask;
    mask.M = M;
    std::vector<int> a = mics, c = mics;
    std::shuffle(a.begin(), a.end(), rng);
    std::shuffle(c.begin(), c.end(), rng);
    a.resize(static_cast<std::size_t>(count(rng)));
    c.resize(static_cast<std::size_t>(count(rng)));
    const bool source = std::bernoulli_distribution(0.5)(rng);
    if (source) a.push_back(0);
    std::sort(a.begin(), a.end());
    std::sort(c.begin(), c.end());
    mask.S = a;
    mask.R = c;
    const bool all_coords = static_cast<int>(c.size()) == M;
    mask.setup = all_coords ? (source ? Setup::s1b : Setup::s1a) : (source ? Setup::s2b : Setup::s2a);
    try {
      mask.validate();
      return mask;
    } catch (const InvalidArgument&) {
    }
  }
}

}  // namespace maeloc::model
