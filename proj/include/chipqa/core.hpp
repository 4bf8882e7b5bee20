#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace chipqa {

enum class ErrorCode {
  MalformedHeader,
  GeometryRequired,
  TruncatedPayload,
  IndexOutOfRange,
  FrameTooSmall,
  DimensionMismatch,
  InsufficientHistory,
  DegenerateInput,
  OneSidedInput,
  NoPatchSelected,
  InsufficientCorpus,
  VideoTooShort,
  TooFewSamples,
  TooFewGroups,
  CorruptModel,
  LengthMismatch,
  DegenerateRanks,
  FitDiverged,
  NotConverged,
  TooShort,
  InvalidArgument,
  EmptyInput,
  IoError,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::GeometryRequired: return "GeometryRequired";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::FrameTooSmall: return "FrameTooSmall";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InsufficientHistory: return "InsufficientHistory";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::OneSidedInput: return "OneSidedInput";
    case ErrorCode::NoPatchSelected: return "NoPatchSelected";
    case ErrorCode::InsufficientCorpus: return "InsufficientCorpus";
    case ErrorCode::VideoTooShort: return "VideoTooShort";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::TooFewGroups: return "TooFewGroups";
    case ErrorCode::CorruptModel: return "CorruptModel";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::DegenerateRanks: return "DegenerateRanks";
    case ErrorCode::FitDiverged: return "FitDiverged";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Row-major 2-D array. Index as (row, col) == (y, x).
template <typename T>
class Plane {
 public:
  Plane() = default;
  Plane(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), fill) {
    if (width < 0 || height < 0) throw Error(ErrorCode::InvalidArgument, "negative plane size");
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int row, int col) { return data_[static_cast<std::size_t>(row) * width_ + col]; }
  const T& operator()(int row, int col) const {
    return data_[static_cast<std::size_t>(row) * width_ + col];
  }

  T* row(int r) { return data_.data() + static_cast<std::size_t>(r) * width_; }
  const T* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * width_; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool same_shape(const Plane& o) const { return width_ == o.width_ && height_ == o.height_; }
  friend bool operator==(const Plane&, const Plane&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using Image = Plane<double>;

// Mirror index into [0, n) without repeating the edge sample (…2 1 | 0 1 2 … n-1 | n-2 …).
inline int reflect101(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

inline double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Worker count: explicit value wins, then CHIPQA_NUM_THREADS, then 1.
inline int resolve_jobs(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CHIPQA_NUM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  if (n == 0) return;
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto body = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
    body();
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace chipqa
