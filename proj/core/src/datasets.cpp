#include "binnlab/datasets.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "binnlab/rng.hpp"

namespace binnlab {

namespace {

void assign_split(Dataset& ds, double train_fraction, std::size_t n_classes,
                  bool interleaved_classes) {
  const std::size_t n = ds.size();
  ds.train_indices.clear();
  ds.eval_indices.clear();
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw std::invalid_argument("train_fraction must be in [0, 1]");
  }
  if (interleaved_classes && n_classes > 0) {
    // Rows cycle through classes; split within each class run.
    const std::size_t per_class = n / n_classes;
    const std::size_t train_per_class =
        static_cast<std::size_t>(train_fraction * static_cast<double>(per_class));
    for (std::size_t idx = 0; idx < n; ++idx) {
      const std::size_t within = idx / n_classes;
      (within < train_per_class ? ds.train_indices : ds.eval_indices).push_back(idx);
    }
  } else {
    const std::size_t train_n = static_cast<std::size_t>(train_fraction * static_cast<double>(n));
    for (std::size_t idx = 0; idx < n; ++idx) {
      (idx < train_n ? ds.train_indices : ds.eval_indices).push_back(idx);
    }
  }
}

}  // namespace

void Dataset::validate() const {
  if (inputs.rank() != 2 && inputs.rank() != 3) {
    throw std::invalid_argument("Dataset: inputs must be rank 2 or 3");
  }
  if (!inputs.is_binary()) throw std::invalid_argument("Dataset: inputs must be binary");
  if (targets.size() != size()) throw std::invalid_argument("Dataset: target count mismatch");
  for (std::size_t t : targets) {
    if (t >= n_classes) throw std::invalid_argument("Dataset: target exceeds class count");
  }
  if (train_indices.size() + eval_indices.size() != size()) {
    throw std::invalid_argument("Dataset: split not exhaustive");
  }
}

Dataset gen_parity(std::size_t n_bits, std::size_t n_samples, std::uint64_t seed,
                   double train_fraction) {
  if (n_bits == 0 || n_bits > 16) throw std::invalid_argument("gen_parity: n_bits must be 1..16");
  Dataset ds;
  ds.inputs = Tensor({n_samples, n_bits});
  ds.targets.resize(n_samples);
  ds.n_classes = 2;
  RngStream rng = RngKey(seed).child(rngtag::kData).stream();
  for (std::size_t s = 0; s < n_samples; ++s) {
    const std::size_t want = s % 2;  // exact balance for even n_samples
    std::size_t parity = 0;
    for (std::size_t b = 0; b < n_bits; ++b) {
      const double bit = rng.next_double() < 0.5 ? 0.0 : 1.0;
      ds.inputs(s, b) = bit;
      parity ^= static_cast<std::size_t>(bit);
    }
    if (parity != want) {
      // Flipping one bit maps the parity classes bijectively, so rows stay
      // uniform within their class.
      ds.inputs(s, 0) = 1.0 - ds.inputs(s, 0);
      parity = want;
    }
    ds.targets[s] = parity;
  }
  assign_split(ds, train_fraction, 0, false);
  ds.validate();
  return ds;
}

void SpikePattern::validate() const {
  if (class_templates.empty()) throw std::invalid_argument("SpikePattern: no class templates");
  for (const Tensor& t : class_templates) {
    if (t.rank() != 2 || !t.same_shape(class_templates.front())) {
      throw std::invalid_argument("SpikePattern: templates must share a [T, channels] shape");
    }
    for (double v : t.data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("SpikePattern: rate outside [0,1]");
    }
  }
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) {
    throw std::invalid_argument("SpikePattern: noise rate outside [0,1]");
  }
}

Dataset gen_from_spike_pattern(const SpikePattern& pattern, std::size_t samples_per_class,
                               std::uint64_t seed, double train_fraction) {
  pattern.validate();
  const std::size_t n_classes = pattern.class_templates.size();
  const std::size_t timesteps = pattern.class_templates.front().dim(0);
  const std::size_t channels = pattern.class_templates.front().dim(1);
  const std::size_t n = n_classes * samples_per_class;

  Dataset ds;
  ds.inputs = Tensor({n, timesteps, channels});
  ds.targets.resize(n);
  ds.n_classes = n_classes;
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t cls = s % n_classes;
    ds.targets[s] = cls;
    const Tensor& tmpl = pattern.class_templates[cls];
    RngStream rng = RngKey(seed).child(rngtag::kData).child(s).stream();
    for (std::size_t t = 0; t < timesteps; ++t) {
      for (std::size_t c = 0; c < channels; ++c) {
        const bool noisy = rng.next_double() < pattern.noise_rate;
        const double rate = noisy ? 0.5 : tmpl(t, c);
        ds.inputs(s, t, c) = rng.next_double() < rate ? 1.0 : 0.0;
      }
    }
  }
  assign_split(ds, train_fraction, n_classes, true);
  ds.validate();
  return ds;
}

Dataset gen_temporal_pattern(std::size_t n_classes, std::size_t timesteps,
                             std::size_t channels, double noise_rate, std::uint64_t seed,
                             std::size_t samples_per_class, double train_fraction) {
  if (timesteps == 0 || timesteps > 100) {
    throw std::invalid_argument("gen_temporal_pattern: timesteps must be 1..100");
  }
  SpikePattern pattern;
  pattern.noise_rate = noise_rate;
  RngStream rng = RngKey(seed).child(rngtag::kData).child(9999).stream();
  for (std::size_t cls = 0; cls < n_classes; ++cls) {
    Tensor tmpl({timesteps, channels});
    for (double& v : tmpl.vec()) v = 0.05 + 0.4 * rng.next_double();
    pattern.class_templates.push_back(std::move(tmpl));
  }
  return gen_from_spike_pattern(pattern, samples_per_class, seed, train_fraction);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace

Dataset load_csv_dataset(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_csv_dataset: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::invalid_argument("load_csv_dataset: missing header row in " + path);
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv_line(line);

  std::ptrdiff_t label_col = -1;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == schema.label_column) {
      label_col = static_cast<std::ptrdiff_t>(c);
    }
  }
  if (label_col < 0) {
    throw std::invalid_argument("load_csv_dataset: no '" + schema.label_column + "' column");
  }
  if (schema.feature_columns.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (static_cast<std::ptrdiff_t>(c) != label_col) feature_cols.push_back(c);
    }
  } else {
    for (const std::string& name : schema.feature_columns) {
      bool found = false;
      for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == name) {
          feature_cols.push_back(c);
          found = true;
          break;
        }
      }
      if (!found) throw std::invalid_argument("load_csv_dataset: unknown feature column " + name);
    }
  }

  std::vector<double> values;
  std::vector<std::size_t> targets;
  std::size_t line_no = 1;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw std::invalid_argument("load_csv_dataset: line " + std::to_string(line_no) +
                                  ": expected " + std::to_string(header.size()) + " fields, got " +
                                  std::to_string(fields.size()));
    }
    for (std::size_t c : feature_cols) {
      double v;
      try {
        v = std::stod(fields[c]);
      } catch (const std::exception&) {
        throw std::invalid_argument("load_csv_dataset: line " + std::to_string(line_no) +
                                    ": non-numeric feature '" + fields[c] + "'");
      }
      if (v != 0.0 && v != 1.0) {
        throw std::invalid_argument("load_csv_dataset: line " + std::to_string(line_no) +
                                    ": feature value " + fields[c] + " is not 0/1");
      }
      values.push_back(v);
    }
    long label;
    try {
      label = std::stol(fields[static_cast<std::size_t>(label_col)]);
    } catch (const std::exception&) {
      throw std::invalid_argument("load_csv_dataset: line " + std::to_string(line_no) +
                                  ": unknown label '" + fields[static_cast<std::size_t>(label_col)] +
                                  "'");
    }
    if (label < 0) {
      throw std::invalid_argument("load_csv_dataset: line " + std::to_string(line_no) +
                                  ": negative label");
    }
    targets.push_back(static_cast<std::size_t>(label));
    max_label = std::max(max_label, static_cast<std::size_t>(label));
  }

  Dataset ds;
  const std::size_t rows = targets.size();
  ds.inputs = Tensor::from({rows, feature_cols.size()}, std::move(values));
  ds.targets = std::move(targets);
  ds.n_classes = rows == 0 ? 0 : max_label + 1;
  assign_split(ds, 1.0, 0, false);
  if (rows > 0) ds.validate();
  return ds;
}

void write_csv_dataset(const Dataset& dataset, const std::string& path) {
  if (dataset.spiking()) {
    throw std::invalid_argument("write_csv_dataset: spike datasets use JSONL");
  }
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("write_csv_dataset: cannot open " + path);
  const std::size_t features = dataset.inputs.dim(1);
  for (std::size_t c = 0; c < features; ++c) out << "f" << c << ",";
  out << "label\n";
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    for (std::size_t c = 0; c < features; ++c) {
      out << static_cast<int>(dataset.inputs(s, c)) << ",";
    }
    out << dataset.targets[s] << "\n";
  }
}

Dataset load_jsonl_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_jsonl_dataset: cannot open " + path);
  std::vector<double> values;
  std::vector<std::size_t> targets;
  std::size_t timesteps = 0, channels = 0, max_label = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::invalid_argument("load_jsonl_dataset: line " + std::to_string(line_no) + ": " +
                                  e.what());
    }
    if (!record.contains("spikes") || !record.contains("label")) {
      throw std::invalid_argument("load_jsonl_dataset: line " + std::to_string(line_no) +
                                  ": need 'spikes' and 'label'");
    }
    const auto& spikes = record["spikes"];
    if (!spikes.is_array() || spikes.empty()) {
      throw std::invalid_argument("load_jsonl_dataset: line " + std::to_string(line_no) +
                                  ": 'spikes' must be a nonempty grid");
    }
    const std::size_t t_here = spikes.size();
    const std::size_t c_here = spikes[0].size();
    if (timesteps == 0) {
      timesteps = t_here;
      channels = c_here;
    } else if (t_here != timesteps || c_here != channels) {
      throw std::invalid_argument("load_jsonl_dataset: line " + std::to_string(line_no) +
                                  ": inconsistent grid shape");
    }
    for (const auto& row : spikes) {
      if (row.size() != channels) {
        throw std::invalid_argument("load_jsonl_dataset: line " + std::to_string(line_no) +
                                    ": ragged grid");
      }
      for (const auto& v : row) {
        const double x = v.get<double>();
        if (x != 0.0 && x != 1.0) {
          throw std::invalid_argument("load_jsonl_dataset: line " + std::to_string(line_no) +
                                      ": spike value must be 0/1");
        }
        values.push_back(x);
      }
    }
    const long label = record["label"].get<long>();
    if (label < 0) {
      throw std::invalid_argument("load_jsonl_dataset: line " + std::to_string(line_no) +
                                  ": negative label");
    }
    targets.push_back(static_cast<std::size_t>(label));
    max_label = std::max(max_label, static_cast<std::size_t>(label));
  }
  Dataset ds;
  const std::size_t rows = targets.size();
  ds.inputs = Tensor::from({rows, timesteps, channels}, std::move(values));
  ds.targets = std::move(targets);
  ds.n_classes = rows == 0 ? 0 : max_label + 1;
  assign_split(ds, 1.0, 0, false);
  if (rows > 0) ds.validate();
  return ds;
}

void write_jsonl_dataset(const Dataset& dataset, const std::string& path) {
  if (!dataset.spiking()) {
    throw std::invalid_argument("write_jsonl_dataset: tabular datasets use CSV");
  }
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("write_jsonl_dataset: cannot open " + path);
  const std::size_t timesteps = dataset.inputs.dim(1), channels = dataset.inputs.dim(2);
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    nlohmann::json spikes = nlohmann::json::array();
    for (std::size_t t = 0; t < timesteps; ++t) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t c = 0; c < channels; ++c) {
        row.push_back(static_cast<int>(dataset.inputs(s, t, c)));
      }
      spikes.push_back(std::move(row));
    }
    nlohmann::json record;
    record["spikes"] = std::move(spikes);
    record["label"] = dataset.targets[s];
    out << record.dump() << "\n";
  }
}

}  // namespace binnlab
