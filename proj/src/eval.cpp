// SPDX-License-Identifier: Apache-2.0
#include "textforge/eval.hpp"

#include "textforge/text.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unistd.h>

namespace textforge::eval {

namespace {

using Plane = Eigen::ArrayXXd;  // rows = y, cols = x

void require_same_size(const Image& a, const Image& b, const char* what) {
    if (a.width != b.width || a.height != b.height)
        throw ContractError(std::string(what) + ": image dimensions differ");
    if (a.empty()) throw ContractError(std::string(what) + ": empty image");
}

std::pair<Image, Image> reconcile_channels(const Image& a, const Image& b) {
    if (a.channels == b.channels) return {a, b};
    return {to_rgb(a), to_rgb(b)};
}

double sorted_sum(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum;
}

double sorted_mean(std::vector<double> values) {
    if (values.empty()) return 0.0;
    const double n = static_cast<double>(values.size());
    return sorted_sum(std::move(values)) / n;
}

Image replicate(const Image& image, int k) {
    Image out(image.width * k, image.height * k, image.channels);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = image.at(x / k, y / k, c);
    return out;
}

/// Places a window of `size` along one axis so it covers [lo, hi) and stays inside [0, extent).
int place_window(int lo, int hi, int size, int extent) {
    const int start = lo - (size - (hi - lo)) / 2;
    return std::clamp(start, 0, extent - size);
}

ZoomCrop crop_and_scale(const Image& image, const Image& mask, const masks::BoundingBox& box, int cw, int ch, int k) {
    ZoomCrop out;
    const int x = place_window(box.x0, box.x1, cw, image.width);
    const int y = place_window(box.y0, box.y1, ch, image.height);
    out.window = {x, y, x + cw, y + ch};
    out.scale = k;
    out.image = replicate(crop(image, x, y, cw, ch), k);
    out.mask = replicate(crop(mask, x, y, cw, ch), k);
    return out;
}

Image checked_mask(const Image& image, const Image& mask) {
    if (mask.width > image.width || mask.height > image.height) throw ContractError("zoom_crop: mask larger than image");
    if (mask.width != image.width || mask.height != image.height) throw ContractError("zoom_crop: mask and image differ in size");
    Image m = mask.channels == 1 ? mask : to_gray(mask);
    if (count_mask_pixels(m) == 0) throw ValidationError("zoom_crop: mask is empty");
    return m;
}

// --- MS-SSIM --------------------------------------------------------------------------------

Eigen::ArrayXd gaussian_window(int size, double sigma) {
    Eigen::ArrayXd w(size);
    const double center = (size - 1) / 2.0;
    for (int i = 0; i < size; ++i) w(i) = std::exp(-(i - center) * (i - center) / (2.0 * sigma * sigma));
    return w / w.sum();
}

/// Separable 'valid' correlation.
Plane filter_valid(const Plane& p, const Eigen::ArrayXd& w) {
    const int n = static_cast<int>(w.size());
    const int h = static_cast<int>(p.rows()) - n + 1;
    const int wd = static_cast<int>(p.cols()) - n + 1;
    Plane rows = Plane::Zero(p.rows(), wd);
    for (int k = 0; k < n; ++k) rows += w(k) * p.middleCols(k, wd);
    Plane out = Plane::Zero(h, wd);
    for (int k = 0; k < n; ++k) out += w(k) * rows.middleRows(k, h);
    return out;
}

Plane downsample(const Plane& p) {
    const Eigen::Index h = p.rows() / 2, w = p.cols() / 2;
    Plane out(h, w);
    for (Eigen::Index y = 0; y < h; ++y)
        for (Eigen::Index x = 0; x < w; ++x)
            out(y, x) = 0.25 * (p(2 * y, 2 * x) + p(2 * y + 1, 2 * x) + p(2 * y, 2 * x + 1) + p(2 * y + 1, 2 * x + 1));
    return out;
}

struct SsimParts {
    double ssim;
    double cs;
};

SsimParts ssim_parts(const Plane& a, const Plane& b, const Eigen::ArrayXd& w, double c1, double c2) {
    const Plane mu_a = filter_valid(a, w);
    const Plane mu_b = filter_valid(b, w);
    const Plane saa = filter_valid(a * a, w) - mu_a * mu_a;
    const Plane sbb = filter_valid(b * b, w) - mu_b * mu_b;
    const Plane sab = filter_valid(a * b, w) - mu_a * mu_b;
    const Plane cs = (2.0 * sab + c2) / (saa + sbb + c2);
    const Plane lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1);
    return {(lum * cs).mean(), cs.mean()};
}

double ms_ssim_plane(Plane a, Plane b, const MsSsimOptions& o) {
    const int min_side = static_cast<int>(std::min(a.rows(), a.cols()));
    const int window = std::min(o.window, min_side);
    int scales = 1;
    while (scales < static_cast<int>(o.weights.size()) && (min_side >> scales) >= window) ++scales;
    double weight_sum = 0.0;
    for (int s = 0; s < scales; ++s) weight_sum += o.weights[static_cast<size_t>(s)];
    const Eigen::ArrayXd w = gaussian_window(window, o.sigma);
    const double c1 = o.k1 * o.k1, c2 = o.k2 * o.k2;

    double result = 1.0;
    for (int s = 0; s < scales; ++s) {
        const SsimParts parts = ssim_parts(a, b, w, c1, c2);
        const double weight = o.weights[static_cast<size_t>(s)] / weight_sum;
        const double value = s + 1 < scales ? parts.cs : parts.ssim;
        result *= std::pow(std::max(value, 0.0), weight);
        if (s + 1 < scales) {
            a = downsample(a);
            b = downsample(b);
        }
    }
    return result;
}

// --- subprocess helpers -----------------------------------------------------------------------

std::filesystem::path scratch_png(const std::filesystem::path& dir, const Image& image) {
    static std::atomic<unsigned> counter{0};
    const auto path = dir / ("textforge_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + ".png");
    write_png(path, image);
    return path;
}

std::string substitute(std::string command, const std::string& path) {
    const std::string key = "{image}";
    const std::string quoted = "'" + path + "'";
    for (size_t pos = command.find(key); pos != std::string::npos; pos = command.find(key, pos + quoted.size()))
        command.replace(pos, key.size(), quoted);
    return command;
}

std::optional<std::string> run_capture(const std::string& command) {
    FILE* pipe = ::popen(command.c_str(), "r");
    if (!pipe) return std::nullopt;
    std::string out;
    char buffer[4096];
    size_t n;
    while ((n = std::fread(buffer, 1, sizeof buffer, pipe)) > 0) out.append(buffer, n);
    const int status = ::pclose(pipe);
    if (status != 0) return std::nullopt;
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

Image region_of(const Image& image, const masks::BoundingBox& box) {
    return crop(image, box.x0, box.y0, box.width(), box.height());
}

nlohmann::json optional_number(const std::optional<double>& v) {
    if (v && std::isfinite(*v)) return *v;
    return nullptr;
}

}  // namespace

Image composite_with_input(const Image& output, const Image& input, const Image& pixel_mask) {
    require_same_size(output, input, "composite_with_input");
    require_same_size(output, pixel_mask, "composite_with_input");
    return composite(output, input, pixel_mask.channels == 1 ? pixel_mask : to_gray(pixel_mask));
}

ZoomCrop zoom_crop(const Image& image, const Image& mask, int min_side) {
    if (min_side < 1) throw ContractError("zoom_crop: min_side must be positive");
    const Image m = checked_mask(image, mask);
    const masks::BoundingBox box = masks::bounding_box(m);
    const int short_side = std::min(box.width(), box.height());
    if (short_side >= min_side) return ZoomCrop{image, m, {0, 0, image.width, image.height}, 1};
    const int k = (min_side + short_side - 1) / short_side;
    const int cw = std::min(image.width, std::max((image.width + k - 1) / k, box.width()));
    const int ch = std::min(image.height, std::max((image.height + k - 1) / k, box.height()));
    return crop_and_scale(image, m, box, cw, ch, k);
}

ZoomCrop zoom_crop_all_text(const Image& image, const Image& mask) {
    const Image m = checked_mask(image, mask);
    const masks::BoundingBox box = masks::bounding_box(m);
    int k = 1;
    while ((image.width + k) / (k + 1) >= box.width() && (image.height + k) / (k + 1) >= box.height()) ++k;
    const int cw = (image.width + k - 1) / k;
    const int ch = (image.height + k - 1) / k;
    return crop_and_scale(image, m, box, cw, ch, k);
}

Channels to_channels(const Image& image) {
    Channels out(static_cast<size_t>(image.channels), Matrix(image.height, image.width));
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < image.channels; ++c) out[static_cast<size_t>(c)](y, x) = image.at(x, y, c) / 255.0;
    return out;
}

namespace {

void require_same_shape(const Channels& a, const Channels& b, const char* what) {
    if (a.empty() || a.size() != b.size()) throw ContractError(std::string(what) + ": channel counts differ");
    for (size_t c = 0; c < a.size(); ++c)
        if (a[c].rows() != b[c].rows() || a[c].cols() != b[c].cols() || a[c].size() == 0 ||
            a[c].rows() != a[0].rows() || a[c].cols() != a[0].cols())
            throw ContractError(std::string(what) + ": plane dimensions differ");
}

}  // namespace

double mse(const Channels& a, const Channels& b) {
    require_same_shape(a, b, "mse");
    double sum = 0.0;
    Eigen::Index count = 0;
    for (size_t c = 0; c < a.size(); ++c) {
        sum += (a[c] - b[c]).squaredNorm();
        count += a[c].size();
    }
    return sum / static_cast<double>(count);
}

double mse(const Image& a, const Image& b) {
    require_same_size(a, b, "mse");
    const auto [x, y] = reconcile_channels(a, b);
    return mse(to_channels(x), to_channels(y));
}

double psnr_from_mse(double mse_value) {
    if (mse_value < 0.0) throw ContractError("psnr: negative mse");
    if (mse_value == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse_value));
}

double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }
double psnr(const Channels& a, const Channels& b) { return psnr_from_mse(mse(a, b)); }

double ms_ssim(const Image& a, const Image& b, const MsSsimOptions& options) {
    require_same_size(a, b, "ms_ssim");
    if (options.weights.empty() || options.window < 1) throw ContractError("ms_ssim: invalid options");
    const auto [x, y] = reconcile_channels(a, b);
    return ms_ssim(to_channels(x), to_channels(y), options);
}

double ms_ssim(const Channels& a, const Channels& b, const MsSsimOptions& options) {
    require_same_shape(a, b, "ms_ssim");
    if (options.weights.empty() || options.window < 1) throw ContractError("ms_ssim: invalid options");
    double sum = 0.0;
    for (size_t c = 0; c < a.size(); ++c) sum += ms_ssim_plane(a[c].array(), b[c].array(), options);
    return sum / static_cast<double>(a.size());
}

std::size_t levenshtein(std::u32string_view a, std::u32string_view b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double normalized_edit_similarity(std::string_view a, std::string_view b) {
    const std::u32string ua = decode_utf8(a), ub = decode_utf8(b);
    const std::size_t longest = std::max(ua.size(), ub.size());
    if (longest == 0) return 1.0;
    return 1.0 - static_cast<double>(levenshtein(ua, ub)) / static_cast<double>(longest);
}

AccuracyResult rendering_accuracy(const std::vector<std::string>& predicted, const std::vector<std::string>& targets) {
    if (predicted.empty()) throw ContractError("rendering_accuracy: empty lists");
    if (predicted.size() != targets.size()) throw ContractError("rendering_accuracy: list lengths differ");
    std::vector<double> exact, ned;
    for (size_t i = 0; i < predicted.size(); ++i) {
        exact.push_back(predicted[i] == targets[i] ? 1.0 : 0.0);
        ned.push_back(normalized_edit_similarity(predicted[i], targets[i]));
    }
    return {100.0 * sorted_mean(exact), sorted_mean(ned)};
}

CommandRecognizer::CommandRecognizer(std::string command, std::filesystem::path scratch_dir)
    : command_(std::move(command)), scratch_(std::move(scratch_dir)) {}

std::optional<std::string> CommandRecognizer::recognize(const std::string&, const Image& crop_image) {
    const auto path = scratch_png(scratch_, crop_image);
    std::optional<std::string> out = run_capture(substitute(command_, path.string()));
    std::error_code ec;
    std::filesystem::remove(path, ec);
    if (!out) return std::nullopt;
    const size_t eol = out->find_first_of("\r\n");
    return out->substr(0, eol);
}

PredictionsFileRecognizer::PredictionsFileRecognizer(const std::filesystem::path& path) {
    try {
        const auto doc = nlohmann::json::parse(read_file(path));
        for (const auto& [key, value] : doc.items()) predictions_[key] = value.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("predictions file " + path.string() + ": " + e.what());
    }
}

std::optional<std::string> PredictionsFileRecognizer::recognize(const std::string& case_id, const Image&) {
    const auto it = predictions_.find(case_id);
    if (it == predictions_.end()) return std::nullopt;
    return it->second;
}

CommandFeatureExtractor::CommandFeatureExtractor(std::string command, std::filesystem::path scratch_dir)
    : command_(std::move(command)), scratch_(std::move(scratch_dir)) {}

Vector CommandFeatureExtractor::features(const Image& image) {
    const auto path = scratch_png(scratch_, image);
    std::optional<std::string> out = run_capture(substitute(command_, path.string()));
    std::error_code ec;
    std::filesystem::remove(path, ec);
    if (!out) throw PipelineError("feature extractor command failed");
    std::istringstream in(*out);
    std::vector<double> values;
    double v;
    while (in >> v) values.push_back(v);
    if (values.empty()) throw PipelineError("feature extractor produced no numbers");
    return Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

double frechet_distance(const Matrix& fa, const Matrix& fb) {
    if (fa.rows() < 2 || fb.rows() < 2) throw ContractError("frechet_distance: need at least two samples per set");
    if (fa.cols() != fb.cols()) throw ContractError("frechet_distance: feature dimensions differ");
    auto stats = [](const Matrix& f) {
        const Eigen::RowVectorXd mu = f.colwise().mean();
        const Matrix centered = f.rowwise() - mu;
        const Matrix cov = centered.transpose() * centered / static_cast<double>(f.rows() - 1);
        return std::pair{mu, cov};
    };
    const auto [mu_a, cov_a] = stats(fa);
    const auto [mu_b, cov_b] = stats(fb);
    Eigen::SelfAdjointEigenSolver<Matrix> eig_a(cov_a);
    const Matrix sqrt_a = eig_a.operatorSqrt();
    const Matrix inner = sqrt_a * cov_b * sqrt_a;
    Eigen::SelfAdjointEigenSolver<Matrix> eig_inner((inner + inner.transpose()) / 2.0, Eigen::EigenvaluesOnly);
    double trace_sqrt = 0.0;
    for (Eigen::Index i = 0; i < eig_inner.eigenvalues().size(); ++i) trace_sqrt += std::sqrt(std::max(0.0, eig_inner.eigenvalues()(i)));
    return (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * trace_sqrt;
}

MetricsReport evaluate_task(const std::vector<EvalCase>& cases, const std::vector<Image>& outputs, TaskKind task,
                            Recognizer* recognizer, FeatureExtractor* fid_extractor) {
    if (cases.empty()) throw ValidationError("evaluation: no cases");
    if (cases.size() != outputs.size())
        throw ValidationError("evaluation: " + std::to_string(outputs.size()) + " outputs for " + std::to_string(cases.size()) +
                              " cases");
    MetricsReport report;
    report.task = task;
    report.n_samples = cases.size();

    std::vector<std::string> predicted, targets;
    bool all_read = recognizer != nullptr && task != TaskKind::removal;
    std::vector<Image> scored_outputs, scored_truths;
    for (size_t i = 0; i < cases.size(); ++i) {
        const EvalCase& c = cases[i];
        const Image& out = outputs[i];
        if (c.ground_truth.empty()) throw ValidationError("evaluation: case " + c.id + " has no ground truth");
        if (out.width != c.ground_truth.width || out.height != c.ground_truth.height)
            throw ValidationError("evaluation: output for case " + c.id + " differs in size from its ground truth");
        if (c.mask.width != out.width || c.mask.height != out.height)
            throw ValidationError("evaluation: mask for case " + c.id + " differs in size from its output");
        const Image mask = c.mask.channels == 1 ? c.mask : to_gray(c.mask);
        if (count_mask_pixels(mask) == 0) throw ValidationError("evaluation: case " + c.id + " has an empty mask");

        Image scored, truth;
        if (task == TaskKind::removal) {
            scored = composite_with_input(out, c.input.empty() ? c.ground_truth : c.input, mask);
            truth = c.ground_truth;
        } else {
            const masks::BoundingBox box = masks::bounding_box(mask);
            scored = region_of(out, box);
            truth = region_of(c.ground_truth, box);
        }
        CaseMetrics m;
        m.id = c.id;
        m.mse = mse(scored, truth);
        m.psnr = psnr_from_mse(m.mse);
        m.ms_ssim = ms_ssim(scored, truth);
        if (all_read) {
            std::optional<std::string> reading = recognizer->recognize(c.id, scored);
            if (!reading) {
                all_read = false;
            } else {
                m.prediction = *reading;
                m.ned = normalized_edit_similarity(*reading, c.target_text);
                m.exact = *reading == c.target_text;
                predicted.push_back(*reading);
                targets.push_back(c.target_text);
            }
        }
        report.cases.push_back(std::move(m));
        if (fid_extractor) {
            scored_outputs.push_back(std::move(scored));
            scored_truths.push_back(std::move(truth));
        }
    }

    std::vector<double> mses, psnrs, ssims;
    for (const CaseMetrics& m : report.cases) {
        mses.push_back(m.mse);
        psnrs.push_back(m.psnr);
        ssims.push_back(m.ms_ssim);
    }
    report.mse = sorted_mean(mses);
    report.psnr = sorted_mean(psnrs);
    report.ms_ssim = sorted_mean(ssims);
    if (all_read && !predicted.empty()) {
        const AccuracyResult acc = rendering_accuracy(predicted, targets);
        report.acc = acc.acc;
        report.ned = acc.ned;
    }
    if (fid_extractor && cases.size() >= 2) {
        // Sort by case id so the fitted statistics do not depend on input order.
        std::vector<size_t> order(cases.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](size_t l, size_t r) { return cases[l].id < cases[r].id; });
        Matrix fa, fb;
        for (size_t row = 0; row < order.size(); ++row) {
            const Vector va = fid_extractor->features(scored_outputs[order[row]]);
            const Vector vb = fid_extractor->features(scored_truths[order[row]]);
            if (row == 0) {
                fa.resize(static_cast<Eigen::Index>(order.size()), va.size());
                fb.resize(static_cast<Eigen::Index>(order.size()), vb.size());
            }
            fa.row(static_cast<Eigen::Index>(row)) = va.transpose();
            fb.row(static_cast<Eigen::Index>(row)) = vb.transpose();
        }
        report.fid = frechet_distance(fa, fb);
    }
    return report;
}

std::string report_json(const MetricsReport& r) {
    nlohmann::json doc;
    doc["task"] = to_string(r.task);
    doc["n_samples"] = r.n_samples;
    doc["mse"] = r.mse;
    doc["mse_display_scale"] = r.mse_display_scale();
    doc["psnr"] = r.psnr;
    doc["ms_ssim"] = r.ms_ssim;
    doc["acc"] = optional_number(r.acc);
    doc["ned"] = optional_number(r.ned);
    doc["fid"] = optional_number(r.fid);
    nlohmann::json cases = nlohmann::json::array();
    for (const CaseMetrics& c : r.cases) {
        nlohmann::json entry{{"id", c.id}, {"mse", c.mse}, {"psnr", c.psnr}, {"ms_ssim", c.ms_ssim}};
        entry["prediction"] = c.prediction ? nlohmann::json(*c.prediction) : nlohmann::json(nullptr);
        entry["ned"] = optional_number(c.ned);
        entry["exact"] = c.exact ? nlohmann::json(*c.exact) : nlohmann::json(nullptr);
        cases.push_back(std::move(entry));
    }
    doc["cases"] = std::move(cases);
    return doc.dump(2);
}

std::string report_markdown(const MetricsReport& r) {
    auto fixed = [](double v, int digits) {
        std::ostringstream s;
        s << std::fixed << std::setprecision(digits) << v;
        return s.str();
    };
    auto maybe = [&](const std::optional<double>& v, int digits) { return v ? fixed(*v, digits) : std::string("-"); };
    const std::string mse_unit = r.task == TaskKind::removal ? "x1e-3" : "x1e-2";
    std::ostringstream out;
    out << "| Task | N | ACC (%) | NED | MSE (" << mse_unit << ") | MS-SSIM (x1e-2) | PSNR | FID |\n";
    out << "|---|---|---|---|---|---|---|---|\n";
    out << "| " << to_string(r.task) << " | " << r.n_samples << " | " << maybe(r.acc, 2) << " | " << maybe(r.ned, 3) << " | "
        << fixed(r.mse * r.mse_display_scale(), 2) << " | " << fixed(r.ms_ssim * 100.0, 2) << " | " << fixed(r.psnr, 2)
        << " | " << maybe(r.fid, 2) << " |\n";
    return out.str();
}

std::vector<EvalCase> load_dataset(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw ValidationError("dataset directory " + dir.string() + " does not exist");
    std::vector<std::filesystem::path> entries;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_directory()) entries.push_back(e.path());
    std::sort(entries.begin(), entries.end());
    std::vector<EvalCase> cases;
    for (const auto& path : entries) {
        EvalCase c;
        c.id = path.filename().string();
        auto required = [&](const char* name) {
            const auto p = path / name;
            if (!std::filesystem::exists(p)) throw ValidationError("case " + c.id + " is missing " + name);
            return read_png(p);
        };
        auto optional_png = [&](const char* name) {
            const auto p = path / name;
            return std::filesystem::exists(p) ? read_png(p) : Image{};
        };
        c.input = required("input.png");
        c.mask = to_gray(required("mask.png"));
        c.ground_truth = required("gt.png");
        c.ref_image = optional_png("ref.png");
        c.ref_mask = optional_png("ref_mask.png");
        if (!c.ref_mask.empty()) c.ref_mask = to_gray(c.ref_mask);
        const auto meta_path = path / "meta.json";
        if (std::filesystem::exists(meta_path)) {
            try {
                const auto meta = nlohmann::json::parse(read_file(meta_path));
                c.source_text = meta.value("source_text", "");
                c.target_text = meta.value("target_text", "");
                if (meta.contains("task")) c.task = parse_task(meta.at("task").get<std::string>());
            } catch (const nlohmann::json::exception& e) {
                throw ValidationError("case " + c.id + ": bad meta.json: " + e.what());
            }
        }
        cases.push_back(std::move(c));
    }
    if (cases.empty()) throw ValidationError("dataset directory " + dir.string() + " holds no cases");
    return cases;
}

std::vector<Image> load_outputs(const std::filesystem::path& dir, const std::vector<EvalCase>& cases) {
    std::vector<Image> outputs;
    for (const EvalCase& c : cases) {
        const auto flat = dir / (c.id + ".png");
        const auto nested = dir / c.id / "output.png";
        if (std::filesystem::exists(flat)) outputs.push_back(read_png(flat));
        else if (std::filesystem::exists(nested)) outputs.push_back(read_png(nested));
        else throw ValidationError("no output for case " + c.id + " in " + dir.string());
    }
    return outputs;
}

}  // namespace textforge::eval
