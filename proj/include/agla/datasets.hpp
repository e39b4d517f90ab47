#pragma once

// Stream builders: Gaussian-blob synthetic tasks, IDX (MNIST-style) files, and
// label-first CSV tables.

#include "agla/dataset.hpp"
#include "agla/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace agla {

struct SyntheticSpec {
    std::size_t tasks = 5;
    std::size_t classes_per_task = 2;
    std::size_t input_dim = 20;
    std::size_t train_per_class = 200;
    std::size_t test_per_class = 100;
    double separation = 0.5;   // class-mean coordinates are uniform in 0.5 +- separation/2
    double noise = 0.2;        // isotropic standard deviation around each mean
    bool clamp_unit = true;    // clip features into [0,1]
    std::uint64_t seed = 0;

    void validate() const {
        if (tasks < 1 || classes_per_task < 1 || input_dim < 1)
            throw ParameterError("synthetic stream needs tasks, classes and input_dim >= 1");
        if (train_per_class < 1 || test_per_class < 1) throw ParameterError("synthetic stream needs samples per class");
        if (!(separation > 0)) throw ParameterError("separation must be positive");
        if (!(noise >= 0)) throw ParameterError("noise must be >= 0");
    }
};

/// Class c of task k draws x ~ N(mu_c, noise^2 I), optionally clipped to [0,1].
inline TaskStream generate_synthetic_stream(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const std::size_t classes = spec.tasks * spec.classes_per_task;
    std::uniform_real_distribution<double> coord(0.5 - spec.separation / 2, 0.5 + spec.separation / 2);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<std::vector<double>> means(classes, std::vector<double>(spec.input_dim));
    for (auto& m : means)
        for (double& v : m) v = coord(rng);
    for (std::size_t a = 0; a < classes; ++a)
        for (std::size_t b = 0; b < a; ++b)
            if (means[a] == means[b]) throw ParameterError("synthetic class means coincide");

    TaskStream stream;
    stream.input_dim = spec.input_dim;
    stream.unit_range = spec.clamp_unit;
    std::size_t id = 0;
    auto draw = [&](std::size_t cls, std::size_t task) {
        Sample s;
        s.x.resize(spec.input_dim);
        for (std::size_t i = 0; i < spec.input_dim; ++i) {
            double v = means[cls][i] + spec.noise * gauss(rng);
            if (spec.clamp_unit) v = std::clamp(v, 0.0, 1.0);
            s.x[i] = v;
        }
        s.label = cls;
        s.task = task;
        s.id = id++;
        return s;
    };
    for (std::size_t k = 0; k < spec.tasks; ++k) {
        Task t;
        t.index = k;
        for (std::size_t c = 0; c < spec.classes_per_task; ++c) t.classes.push_back(k * spec.classes_per_task + c);
        for (std::size_t c : t.classes)
            for (std::size_t i = 0; i < spec.train_per_class; ++i) t.train.push_back(draw(c, k));
        for (std::size_t c : t.classes)
            for (std::size_t i = 0; i < spec.test_per_class; ++i) t.test.push_back(draw(c, k));
        std::shuffle(t.train.begin(), t.train.end(), rng);
        stream.tasks.push_back(std::move(t));
    }
    stream.validate();
    return stream;
}

/// How labelled rows become tasks: sorted distinct labels, `classes_per_task` per task.
/// Without a separate test file the last `test_fraction` of each class is held out.
struct SplitSpec {
    std::size_t classes_per_task = 2;
    double test_fraction = 0.2;
    std::size_t max_train_per_class = 0;  // 0 keeps everything
    std::size_t max_test_per_class = 0;
};

struct LabeledRows {
    std::vector<std::vector<double>> x;
    std::vector<std::int64_t> labels;
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DomainError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset) {
    if (offset + 4 > b.size()) throw FormatError("truncated IDX header", offset);
    return (std::uint32_t(b[offset]) << 24) | (std::uint32_t(b[offset + 1]) << 16) |
           (std::uint32_t(b[offset + 2]) << 8) | std::uint32_t(b[offset + 3]);
}

struct IdxArray {
    std::vector<std::uint32_t> dims;
    std::size_t payload_offset = 0;
};

inline IdxArray parse_idx_header(const std::vector<unsigned char>& b, std::uint32_t magic) {
    const std::uint32_t got = read_be32(b, 0);
    if (got != magic) {
        std::ostringstream msg;
        msg << "bad IDX magic 0x" << std::hex << got << ", expected 0x" << magic;
        throw FormatError(msg.str(), 0);
    }
    IdxArray a;
    const std::size_t rank = magic & 0xff;
    std::size_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        a.dims.push_back(read_be32(b, 4 + 4 * i));
        count *= a.dims.back();
    }
    a.payload_offset = 4 + 4 * rank;
    if (b.size() != a.payload_offset + count)
        throw FormatError("IDX payload holds " + std::to_string(b.size() - a.payload_offset) + " bytes, header declares " +
                              std::to_string(count),
                          std::min(b.size(), a.payload_offset + count));
    return a;
}

inline TaskStream build_stream(const LabeledRows& train, const LabeledRows* test, const SplitSpec& split) {
    if (split.classes_per_task < 1) throw ParameterError("classes_per_task must be >= 1");
    if (!(split.test_fraction >= 0 && split.test_fraction < 1)) throw ParameterError("test_fraction must lie in [0,1)");
    if (train.x.empty()) throw DomainError("dataset has no rows");
    std::vector<std::int64_t> labels(train.labels);
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    if (labels.size() % split.classes_per_task != 0)
        throw DomainError(std::to_string(labels.size()) + " classes do not split into tasks of " +
                          std::to_string(split.classes_per_task));
    std::map<std::int64_t, std::size_t> rank;
    for (std::size_t i = 0; i < labels.size(); ++i) rank[labels[i]] = i;

    const std::size_t dim = train.x.front().size();
    TaskStream stream;
    stream.input_dim = dim;
    stream.unit_range = true;
    const std::size_t tasks = labels.size() / split.classes_per_task;
    for (std::size_t k = 0; k < tasks; ++k) {
        Task t;
        t.index = k;
        for (std::size_t c = 0; c < split.classes_per_task; ++c) t.classes.push_back(k * split.classes_per_task + c);
        stream.tasks.push_back(std::move(t));
    }

    std::size_t id = 0;
    auto make = [&](const std::vector<double>& x, std::size_t cls) {
        if (x.size() != dim) throw DomainError("row width " + std::to_string(x.size()) + " differs from " + std::to_string(dim));
        if (!within_unit_range(x)) stream.unit_range = false;
        return Sample{x, cls, cls / split.classes_per_task, id++};
    };
    std::vector<std::vector<std::size_t>> by_class(labels.size());
    for (std::size_t i = 0; i < train.x.size(); ++i) by_class[rank.at(train.labels[i])].push_back(i);
    for (std::size_t cls = 0; cls < labels.size(); ++cls) {
        const auto& rows = by_class[cls];
        Task& t = stream.tasks[cls / split.classes_per_task];
        std::size_t n_test = test ? 0 : static_cast<std::size_t>(std::floor(split.test_fraction * rows.size()));
        if (!test && n_test == 0 && rows.size() > 1) n_test = 1;
        const std::size_t n_train = rows.size() - n_test;
        const std::size_t keep_train = split.max_train_per_class ? std::min(n_train, split.max_train_per_class) : n_train;
        for (std::size_t i = 0; i < keep_train; ++i) t.train.push_back(make(train.x[rows[i]], cls));
        const std::size_t keep_test = split.max_test_per_class ? std::min(n_test, split.max_test_per_class) : n_test;
        for (std::size_t i = 0; i < keep_test; ++i) t.test.push_back(make(train.x[rows[n_train + i]], cls));
    }
    if (test) {
        std::vector<std::size_t> taken(labels.size(), 0);
        for (std::size_t i = 0; i < test->x.size(); ++i) {
            auto it = rank.find(test->labels[i]);
            if (it == rank.end()) throw DomainError("test label " + std::to_string(test->labels[i]) + " absent from training data");
            if (split.max_test_per_class && taken[it->second] >= split.max_test_per_class) continue;
            ++taken[it->second];
            stream.tasks[it->second / split.classes_per_task].test.push_back(make(test->x[i], it->second));
        }
    }
    for (const Task& t : stream.tasks)
        if (t.train.empty() || t.test.empty())
            throw DomainError("task " + std::to_string(t.index) + " has an empty train or test split");
    stream.validate();
    return stream;
}

}  // namespace detail

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801); pixels are
/// scaled by 1/255.
inline LabeledRows read_idx_pair(const std::string& images_path, const std::string& labels_path) {
    const auto img = detail::read_file_bytes(images_path);
    const auto lab = detail::read_file_bytes(labels_path);
    const auto ih = detail::parse_idx_header(img, 0x00000803u);
    const auto lh = detail::parse_idx_header(lab, 0x00000801u);
    if (ih.dims[0] != lh.dims[0])
        throw FormatError("image count " + std::to_string(ih.dims[0]) + " differs from label count " +
                              std::to_string(lh.dims[0]),
                          4);
    const std::size_t n = ih.dims[0], pixels = std::size_t(ih.dims[1]) * ih.dims[2];
    LabeledRows rows;
    rows.x.resize(n, std::vector<double>(pixels));
    rows.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < pixels; ++p) rows.x[i][p] = img[ih.payload_offset + i * pixels + p] / 255.0;
        rows.labels[i] = lab[lh.payload_offset + i];
    }
    return rows;
}

inline TaskStream load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                                   const SplitSpec& split = {}) {
    const LabeledRows rows = read_idx_pair(images_path, labels_path);
    return detail::build_stream(rows, nullptr, split);
}

inline TaskStream load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                                   const std::string& test_images_path, const std::string& test_labels_path,
                                   const SplitSpec& split = {}) {
    const LabeledRows train = read_idx_pair(images_path, labels_path);
    const LabeledRows test = read_idx_pair(test_images_path, test_labels_path);
    return detail::build_stream(train, &test, split);
}

/// One row per sample: integer label, then the features. A first line that does not
/// parse as numbers is treated as a header.
inline LabeledRows read_csv_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DomainError("cannot open '" + path + "'");
    LabeledRows rows;
    std::string line;
    std::size_t line_no = 0, offset = 0;
    while (std::getline(in, line)) {
        const std::size_t here = offset;
        offset += line.size() + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> values;
        std::stringstream ss(line);
        std::string field;
        bool ok = true;
        while (std::getline(ss, field, ',')) {
            try {
                std::size_t used = 0;
                values.push_back(std::stod(field, &used));
                if (field.find_first_not_of(" \t", used) != std::string::npos) ok = false;
            } catch (const std::exception&) {
                ok = false;
            }
            if (!ok) break;
        }
        if (!ok) {
            if (line_no == 1) continue;
            throw FormatError("unparseable CSV line " + std::to_string(line_no), here);
        }
        if (values.size() < 2) throw FormatError("CSV line " + std::to_string(line_no) + " has no features", here);
        if (values[0] != std::floor(values[0])) throw FormatError("non-integer label on line " + std::to_string(line_no), here);
        rows.labels.push_back(static_cast<std::int64_t>(values[0]));
        rows.x.emplace_back(values.begin() + 1, values.end());
    }
    return rows;
}

inline TaskStream load_csv_dataset(const std::string& path, const SplitSpec& split = {}) {
    return detail::build_stream(read_csv_rows(path), nullptr, split);
}

}  // namespace agla
