#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace aasist {

enum class Polarity { kHigherIsBonafide, kLowerIsBonafide };

struct EerResult {
  double eer = 0.0;        // in [0, 1]
  double threshold = 0.0;  // accept as bona fide when score >= threshold
};

/// Equal error rate with FRR(t) = #{bona < t} / n_bona and
/// FAR(t) = #{spoof >= t} / n_spoof.
///
/// Candidate thresholds are every distinct score plus one just above the
/// maximum. At the first candidate where FRR >= FAR the crossing is
/// interpolated linearly against the previous candidate. With lower-is-bonafide
/// polarity scores are negated and the returned threshold is mapped back.
inline EerResult compute_eer(std::span<const double> bona, std::span<const double> spoof,
                             Polarity polarity = Polarity::kHigherIsBonafide) {
  if (bona.empty() || spoof.empty()) throw std::invalid_argument("compute_eer: both classes need scores");
  const double sign = polarity == Polarity::kHigherIsBonafide ? 1.0 : -1.0;
  std::vector<double> b, s;
  b.reserve(bona.size());
  s.reserve(spoof.size());
  for (double v : bona) b.push_back(sign * v);
  for (double v : spoof) s.push_back(sign * v);
  for (double v : b)
    if (std::isnan(v)) throw std::invalid_argument("compute_eer: NaN score");
  for (double v : s)
    if (std::isnan(v)) throw std::invalid_argument("compute_eer: NaN score");
  std::sort(b.begin(), b.end());
  std::sort(s.begin(), s.end());

  std::vector<double> cand;
  cand.reserve(b.size() + s.size() + 1);
  std::merge(b.begin(), b.end(), s.begin(), s.end(), std::back_inserter(cand));
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  cand.push_back(std::nextafter(cand.back(), std::numeric_limits<double>::infinity()));

  const double nb = static_cast<double>(b.size()), ns = static_cast<double>(s.size());
  std::size_t ib = 0, is = 0;  // counts of scores strictly below the candidate
  double prev_t = 0.0, prev_frr = 0.0, prev_far = 1.0;
  for (std::size_t k = 0; k < cand.size(); ++k) {
    const double t = cand[k];
    while (ib < b.size() && b[ib] < t) ++ib;
    while (is < s.size() && s[is] < t) ++is;
    const double frr = static_cast<double>(ib) / nb;
    const double far = static_cast<double>(s.size() - is) / ns;
    if (frr >= far) {
      EerResult r;
      if (k == 0 || frr == far) {
        r.eer = frr;
        r.threshold = t;
      } else {
        // d(t) = FRR - FAR goes from negative at prev to non-negative here.
        const double d0 = prev_frr - prev_far, d1 = frr - far;
        const double a = -d0 / (d1 - d0);
        r.eer = prev_frr + a * (frr - prev_frr);
        r.threshold = prev_t + a * (t - prev_t);
      }
      r.threshold *= sign;
      return r;
    }
    prev_t = t;
    prev_frr = frr;
    prev_far = far;
  }
  throw std::logic_error("compute_eer: no crossing found");  // unreachable: the last candidate has FAR = 0
}

}  // namespace aasist
