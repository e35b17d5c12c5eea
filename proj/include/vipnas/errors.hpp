#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vipnas {

// Bad search-space, genome or slice configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse, e.g. forwarding a network with no bound genome.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or too-short data (datasets, sequences, files).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The budget is below the cheapest architecture in the space.
class InfeasibleBudget : public std::runtime_error {
 public:
  InfeasibleBudget(std::int64_t budget, std::int64_t minimum)
      : std::runtime_error("budget " + std::to_string(budget) +
                           " MACs is below the minimum achievable cost " +
                           std::to_string(minimum) + " MACs"),
        budget_(budget),
        minimum_(minimum) {}

  std::int64_t budget() const { return budget_; }
  std::int64_t minimum() const { return minimum_; }

 private:
  std::int64_t budget_;
  std::int64_t minimum_;
};

}  // namespace vipnas
