#pragma once

#include <random>
#include <sstream>
#include <string>

namespace llgan {

// Seeded RNG shared across a run; state round-trips through checkpoints.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  std::mt19937_64& engine() { return engine_; }

  float normal(float mean = 0.f, float stddev = 1.f) {
    std::normal_distribution<float> d(mean, stddev);
    return d(engine_);
  }
  float uniform(float lo = 0.f, float hi = 1.f) {
    std::uniform_real_distribution<float> d(lo, hi);
    return d(engine_);
  }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    std::uniform_int_distribution<int> d(lo, hi);
    return d(engine_);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }
  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace llgan
