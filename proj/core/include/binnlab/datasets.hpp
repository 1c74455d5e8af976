#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "binnlab/tensor.hpp"

namespace binnlab {

/// Binary classification data. Feedforward tasks are [N, features]; spiking
/// tasks [N, T, channels]. Splits are disjoint and exhaustive.
struct Dataset {
  Tensor inputs;
  std::vector<std::size_t> targets;
  std::size_t n_classes = 0;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> eval_indices;

  bool spiking() const { return inputs.rank() == 3; }
  std::size_t size() const { return inputs.empty() ? 0 : inputs.dim(0); }
  void validate() const;
};

/// Uniform bit vectors labelled by their XOR; classes alternate per row so
/// the class balance is exact within one sample for even n_samples.
Dataset gen_parity(std::size_t n_bits, std::size_t n_samples, std::uint64_t seed,
                   double train_fraction = 1.0);

/// Per-class firing-rate templates over (T, channels).
struct SpikePattern {
  std::vector<Tensor> class_templates;  // each [T, channels], rates in [0, 1]
  double noise_rate = 0.0;              // fraction of entries resampled at rate 0.5

  void validate() const;
};

/// Independent Bernoulli spikes from each class template, with noise_rate of
/// the entries resampled uniformly. Rows interleave classes.
Dataset gen_from_spike_pattern(const SpikePattern& pattern, std::size_t samples_per_class,
                               std::uint64_t seed, double train_fraction = 0.8);

/// Random rate templates (rates uniform in [0.05, 0.45]) then sampling as in
/// gen_from_spike_pattern.
Dataset gen_temporal_pattern(std::size_t n_classes, std::size_t timesteps,
                             std::size_t channels, double noise_rate, std::uint64_t seed,
                             std::size_t samples_per_class = 30, double train_fraction = 0.8);

/// CSV ingestion: header row required, features must be exactly 0/1, labels
/// nonnegative integers. Malformed rows are rejected with their line number.
struct CsvSchema {
  std::vector<std::string> feature_columns;  // empty: every non-label column
  std::string label_column = "label";
};

Dataset load_csv_dataset(const std::string& path, const CsvSchema& schema = {});
void write_csv_dataset(const Dataset& dataset, const std::string& path);

/// JSONL spike datasets: one {"spikes": [[0/1 x channels] x T], "label": k}
/// object per line.
Dataset load_jsonl_dataset(const std::string& path);
void write_jsonl_dataset(const Dataset& dataset, const std::string& path);

}  // namespace binnlab
