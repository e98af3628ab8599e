#include "arblab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>

#include "arblab/io.hpp"

namespace arblab {

namespace {

std::vector<std::size_t> count_labels(std::span<const int> labels, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

std::uint32_t read_be32(const std::string& bytes, std::size_t offset, const std::string& what) {
  if (offset + 4 > bytes.size()) throw FormatError(what + ": truncated header", offset);
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  }
  return v;
}

}  // namespace

Dataset Dataset::make(Matrix features, std::vector<int> labels, std::size_t num_classes) {
  if (features.rows() != labels.size()) {
    throw DimensionError("dataset has " + std::to_string(features.rows()) + " feature rows but " +
                         std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw InvalidSpec("label " + std::to_string(y) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    }
  }
  Dataset ds;
  ds.class_counts = count_labels(labels, num_classes);
  for (std::size_t i = 0; i < num_classes; ++i) {
    if (ds.class_counts[i] == 0) {
      throw InvalidSpec("class " + std::to_string(i) + " has no samples");
    }
  }
  ds.features = std::move(features);
  ds.labels = std::move(labels);
  ds.num_classes = num_classes;
  return ds;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Matrix f(indices.size(), dim());
  std::vector<int> y(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(features.row(indices[r]).begin(), dim(), f.row(r).begin());
    y[r] = labels[indices[r]];
  }
  return Dataset::make(std::move(f), std::move(y), num_classes);
}

std::vector<std::size_t> longtail_counts(const LongTailSpec& spec, std::size_t num_classes) {
  if (!(spec.imbalance_factor >= 1.0) || !std::isfinite(spec.imbalance_factor)) {
    throw InvalidSpec("imbalance factor must be >= 1");
  }
  if (spec.base_count < 1) throw InvalidSpec("base count must be >= 1");
  if (num_classes < 1) throw InvalidSpec("need at least one class");
  std::vector<std::size_t> counts(num_classes, spec.base_count);
  if (num_classes == 1) return counts;
  const double denom = static_cast<double>(num_classes - 1);
  for (std::size_t i = 0; i < num_classes; ++i) {
    const double exact = static_cast<double>(spec.base_count) *
                         std::pow(spec.imbalance_factor, -static_cast<double>(i) / denom);
    counts[i] = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(exact + 0.5)));
  }
  return counts;
}

GaussianMixture make_gaussian_mixture(Rng& rng, std::size_t num_classes, std::size_t dim,
                                      double mean_scale) {
  if (num_classes < 2) throw InvalidSpec("need at least two classes");
  if (dim < 1) throw InvalidSpec("dimension must be >= 1");
  GaussianMixture mix{Matrix(num_classes, dim)};
  if (dim >= num_classes) {
    const Matrix q = qr_orthonormal(gaussian_matrix(rng, dim, num_classes));
    for (std::size_t i = 0; i < num_classes; ++i) {
      for (std::size_t k = 0; k < dim; ++k) mix.means(i, k) = mean_scale * q(k, i);
    }
  } else {
    Matrix g = gaussian_matrix(rng, num_classes, dim);
    for (std::size_t i = 0; i < num_classes; ++i) {
      const double n = norm2(g.row(i));
      for (std::size_t k = 0; k < dim; ++k) mix.means(i, k) = mean_scale * g(i, k) / n;
    }
  }
  return mix;
}

Dataset sample_mixture(const GaussianMixture& mixture, std::span<const std::size_t> counts,
                       Rng& rng) {
  const std::size_t c = mixture.means.rows();
  const std::size_t d = mixture.means.cols();
  if (counts.size() != c) {
    throw InvalidSpec("expected " + std::to_string(c) + " class counts, got " +
                      std::to_string(counts.size()));
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i < c; ++i) {
    if (counts[i] < 1) throw InvalidSpec("class " + std::to_string(i) + " has count 0");
    n += counts[i];
  }
  Matrix f(n, d);
  std::vector<int> y(n);
  std::size_t r = 0;
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t s = 0; s < counts[i]; ++s, ++r) {
      y[r] = static_cast<int>(i);
      for (std::size_t k = 0; k < d; ++k) f(r, k) = mixture.means(i, k) + rng.normal();
    }
  }
  return Dataset::make(std::move(f), std::move(y), c);
}

Dataset synth_gaussian_mixture(Rng& rng, std::size_t num_classes, std::size_t dim,
                               std::span<const std::size_t> counts, double mean_scale) {
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] < 1) throw InvalidSpec("class " + std::to_string(i) + " has count 0");
  }
  const GaussianMixture mix = make_gaussian_mixture(rng, num_classes, dim, mean_scale);
  return sample_mixture(mix, counts, rng);
}

Dataset apply_longtail(const Dataset& ds, const LongTailSpec& spec, Rng& rng) {
  const auto targets = longtail_counts(spec, ds.num_classes);
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t j = 0; j < ds.size(); ++j) {
    by_class[static_cast<std::size_t>(ds.labels[j])].push_back(j);
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.num_classes; ++i) {
    auto& idx = by_class[i];
    if (idx.size() < targets[i]) {
      throw InvalidSpec("class " + std::to_string(i) + " has " + std::to_string(idx.size()) +
                        " samples, long-tail target needs " + std::to_string(targets[i]));
    }
    // Partial Fisher–Yates: the first targets[i] slots are a uniform sample.
    for (std::size_t s = 0; s < targets[i]; ++s) {
      const std::size_t j = s + static_cast<std::size_t>(rng.below(idx.size() - s));
      std::swap(idx[s], idx[j]);
    }
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(targets[i]));
  }
  std::sort(keep.begin(), keep.end());
  return ds.subset(keep);
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  Batch b{Matrix(indices.size(), ds.dim()), std::vector<int>(indices.size()),
          std::vector<std::size_t>(ds.num_classes, 0)};
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(ds.features.row(indices[r]).begin(), ds.dim(), b.features.row(r).begin());
    b.labels[r] = ds.labels[indices[r]];
    ++b.batch_counts[static_cast<std::size_t>(b.labels[r])];
  }
  return b;
}

std::vector<Batch> iterate_batches(const Dataset& ds, std::size_t batch_size, bool shuffle,
                                   Rng& rng) {
  if (batch_size < 1) throw InvalidSpec("batch size must be >= 1");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) rng.shuffle(std::span<std::size_t>(order));
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, order.size() - start);
    batches.push_back(make_batch(ds, std::span<const std::size_t>(order).subspan(start, len)));
  }
  return batches;
}

MixedBatch mixup_with(const Batch& batch, double lambda, std::span<const std::size_t> partner) {
  const std::size_t b = batch.labels.size();
  if (partner.size() != b) throw DimensionError("mixup partner list has the wrong length");
  MixedBatch out{Matrix(b, batch.features.cols()), batch.labels, std::vector<int>(b),
                 batch.batch_counts, lambda};
  for (std::size_t j = 0; j < b; ++j) {
    const std::size_t p = partner[j];
    out.labels_b[j] = batch.labels[p];
    auto dst = out.features.row(j);
    auto xa = batch.features.row(j);
    auto xb = batch.features.row(p);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = lambda * xa[k] + (1.0 - lambda) * xb[k];
  }
  return out;
}

MixedBatch mixup(const Batch& batch, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw InvalidSpec("mixup alpha must be > 0");
  const double lambda = rng.beta(alpha, alpha);
  std::vector<std::size_t> partner(batch.labels.size());
  std::iota(partner.begin(), partner.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(partner));
  return mixup_with(batch, lambda, partner);
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const std::string img = read_file(images);
  const std::string lab = read_file(labels);
  if (read_be32(img, 0, "image file") != 0x00000803) {
    throw FormatError("image file: bad magic, expected 0x00000803", 0);
  }
  if (read_be32(lab, 0, "label file") != 0x00000801) {
    throw FormatError("label file: bad magic, expected 0x00000801", 0);
  }
  const std::size_t n = read_be32(img, 4, "image file");
  const std::size_t rows = read_be32(img, 8, "image file");
  const std::size_t cols = read_be32(img, 12, "image file");
  const std::size_t n_labels = read_be32(lab, 4, "label file");
  if (n_labels != n) {
    throw FormatError("label file: " + std::to_string(n_labels) + " labels for " +
                          std::to_string(n) + " images",
                      4);
  }
  const std::size_t d = rows * cols;
  if (img.size() != 16 + n * d) {
    throw FormatError("image file: expected " + std::to_string(16 + n * d) + " bytes",
                      std::min<std::size_t>(img.size(), 16 + n * d));
  }
  if (lab.size() != 8 + n) {
    throw FormatError("label file: expected " + std::to_string(8 + n) + " bytes",
                      std::min<std::size_t>(lab.size(), 8 + n));
  }
  Matrix f(n, d);
  for (std::size_t i = 0; i < n * d; ++i) {
    f.data()[i] = static_cast<unsigned char>(img[16 + i]) / 255.0;
  }
  std::vector<int> y(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<unsigned char>(lab[8 + i]);
    max_label = std::max(max_label, y[i]);
  }
  return Dataset::make(std::move(f), std::move(y), static_cast<std::size_t>(max_label) + 1);
}

Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes) {
  const std::string text = read_file(path);
  std::size_t pos = 0;
  auto next_line = [&](std::size_t& line_start) -> std::optional<std::string_view> {
    if (pos >= text.size()) return std::nullopt;
    line_start = pos;
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    return line;
  };
  auto split = [](std::string_view line) {
    std::vector<std::pair<std::string_view, std::size_t>> fields;  // text, column offset
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      const std::size_t end = comma == std::string_view::npos ? line.size() : comma;
      fields.emplace_back(line.substr(start, end - start), start);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    return fields;
  };

  std::size_t line_start = 0;
  const auto header = next_line(line_start);
  if (!header || header->empty()) throw FormatError("csv: missing header row", 0);
  const auto names = split(*header);
  std::size_t label_col = names.size();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i].first == "label") {
      if (label_col != names.size()) throw FormatError("csv: duplicate label column", names[i].second);
      label_col = i;
    }
  }
  if (label_col == names.size()) throw FormatError("csv: no `label` column in header", 0);
  const std::size_t d = names.size() - 1;

  std::vector<double> values;
  std::vector<int> labels;
  int max_label = -1;
  while (auto line = next_line(line_start)) {
    if (line->empty()) continue;
    const auto fields = split(*line);
    if (fields.size() != names.size()) {
      throw FormatError("csv: row has " + std::to_string(fields.size()) + " fields, header has " +
                            std::to_string(names.size()),
                        line_start);
    }
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const std::string field(fields[i].first);
      const std::uint64_t offset = line_start + fields[i].second;
      std::size_t used = 0;
      if (i == label_col) {
        long v = 0;
        try {
          v = std::stol(field, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (field.empty() || used != field.size() || v < 0) {
          throw FormatError("csv: label `" + field + "` is not a non-negative integer", offset);
        }
        labels.push_back(static_cast<int>(v));
        max_label = std::max(max_label, static_cast<int>(v));
      } else {
        double v = 0.0;
        try {
          v = std::stod(field, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (field.empty() || used != field.size() || !std::isfinite(v)) {
          throw FormatError("csv: feature `" + field + "` is not a finite number", offset);
        }
        values.push_back(v);
      }
    }
  }
  if (labels.empty()) throw FormatError("csv: no data rows", text.size());
  const std::size_t c = num_classes > 0 ? num_classes : static_cast<std::size_t>(max_label) + 1;
  const std::size_t n = labels.size();
  return Dataset::make(Matrix(n, d, std::move(values)), std::move(labels), c);
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ostringstream out;
  for (std::size_t k = 0; k < ds.dim(); ++k) out << 'x' << k << ',';
  out << "label\n";
  for (std::size_t j = 0; j < ds.size(); ++j) {
    for (double v : ds.features.row(j)) out << format_real(v, 17) << ',';
    out << ds.labels[j] << '\n';
  }
  write_file_atomic(path, out.str());
}

}  // namespace arblab
