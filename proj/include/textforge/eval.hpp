// SPDX-License-Identifier: Apache-2.0
#pragma once

// Evaluation protocol: compositing, zoom crops, image metrics, rendering accuracy and reports.

#include "textforge/application.hpp"
#include "textforge/masks.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace textforge::eval {

/// Output pixels inside the mask, input pixels elsewhere.
Image composite_with_input(const Image& output, const Image& input, const Image& pixel_mask);

struct ZoomCrop {
    Image image;
    Image mask;
    masks::BoundingBox window;  // crop window in source pixel coordinates
    int scale = 1;              // integer upscaling applied to the window
};

/// Crops around the mask and upsamples by the smallest integer factor that brings the shorter
/// side of the mask's bounding box to at least `min_side`. Every mask pixel stays inside the
/// crop. A mask that is already large enough returns the input unchanged.
ZoomCrop zoom_crop(const Image& image, const Image& mask, int min_side);

/// Variant for images with several text regions: the tightest zoom whose window, keeping the
/// image aspect ratio, still contains every masked pixel.
ZoomCrop zoom_crop_all_text(const Image& image, const Image& mask);

/// One plane per channel with values in [0, 1] (rows = y).
using Channels = std::vector<Matrix>;
Channels to_channels(const Image& image);

// Image metrics on pixels normalized to [0, 1]. Channel counts are reconciled by promoting to RGB.
double mse(const Image& a, const Image& b);
double mse(const Channels& a, const Channels& b);
inline constexpr double kPsnrCap = 100.0;
double psnr_from_mse(double mse_value);
double psnr(const Image& a, const Image& b);
double psnr(const Channels& a, const Channels& b);

struct MsSsimOptions {
    std::vector<double> weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Multi-scale structural similarity, averaged over channels. Images too small for every scale
/// use the leading scales with renormalized weights.
double ms_ssim(const Image& a, const Image& b, const MsSsimOptions& options = {});
double ms_ssim(const Channels& a, const Channels& b, const MsSsimOptions& options = {});

std::size_t levenshtein(std::u32string_view a, std::u32string_view b);
/// 1 - levenshtein / max length over code points; two empty strings score 1.
double normalized_edit_similarity(std::string_view a, std::string_view b);

struct AccuracyResult {
    double acc = 0.0;  // percent of exact, case-sensitive matches
    double ned = 0.0;  // mean normalized edit similarity
};

AccuracyResult rendering_accuracy(const std::vector<std::string>& predicted, const std::vector<std::string>& targets);

/// Text recognizer. Returns nullopt when no reading is available for the crop.
class Recognizer {
public:
    virtual ~Recognizer() = default;
    virtual std::optional<std::string> recognize(const std::string& case_id, const Image& crop) = 0;
};

/// Runs `command` with every "{image}" replaced by the path of a temporary PNG; the first line
/// of standard output is the reading.
class CommandRecognizer final : public Recognizer {
public:
    explicit CommandRecognizer(std::string command, std::filesystem::path scratch_dir = std::filesystem::temp_directory_path());
    std::optional<std::string> recognize(const std::string& case_id, const Image& crop) override;

private:
    std::string command_;
    std::filesystem::path scratch_;
};

/// Readings precomputed offline: a JSON object mapping case ids to strings.
class PredictionsFileRecognizer final : public Recognizer {
public:
    explicit PredictionsFileRecognizer(const std::filesystem::path& path);
    std::optional<std::string> recognize(const std::string& case_id, const Image& crop) override;

private:
    std::map<std::string, std::string> predictions_;
};

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual Vector features(const Image& image) = 0;
};

/// Runs `command` with "{image}" replaced by a temporary PNG path and parses whitespace-separated
/// numbers from standard output.
class CommandFeatureExtractor final : public FeatureExtractor {
public:
    explicit CommandFeatureExtractor(std::string command, std::filesystem::path scratch_dir = std::filesystem::temp_directory_path());
    Vector features(const Image& image) override;

private:
    std::string command_;
    std::filesystem::path scratch_;
};

/// Frechet distance between Gaussians fitted to two feature sets (rows are samples).
double frechet_distance(const Matrix& features_a, const Matrix& features_b);

struct EvalCase {
    std::string id;
    TaskKind task = TaskKind::editing;
    Image input;
    Image mask;
    Image ground_truth;
    std::string source_text;
    std::string target_text;
    Image ref_image;
    Image ref_mask;
};

struct CaseMetrics {
    std::string id;
    double mse = 0.0;
    double psnr = 0.0;
    double ms_ssim = 0.0;
    std::optional<std::string> prediction;
    std::optional<double> ned;
    std::optional<bool> exact;
};

struct MetricsReport {
    TaskKind task = TaskKind::editing;
    std::size_t n_samples = 0;
    double mse = 0.0;  // unscaled mean
    double psnr = 0.0;
    double ms_ssim = 0.0;
    std::optional<double> acc;
    std::optional<double> ned;
    std::optional<double> fid;
    std::vector<CaseMetrics> cases;

    /// Display multiplier for MSE: 1e3 for removal, 1e2 otherwise. MS-SSIM is shown times 1e2.
    double mse_display_scale() const { return task == TaskKind::removal ? 1e3 : 1e2; }
};

/// Removal outputs are composited with the input and scored on the whole image; every other task
/// is scored on the mask's bounding box. Recognition and FID run only when adapters are given.
MetricsReport evaluate_task(const std::vector<EvalCase>& cases, const std::vector<Image>& outputs, TaskKind task,
                            Recognizer* recognizer = nullptr, FeatureExtractor* fid_extractor = nullptr);

std::string report_json(const MetricsReport& report);
/// One header row and one value row in the order ACC, NED, MSE, MS-SSIM, PSNR, FID.
std::string report_markdown(const MetricsReport& report);

/// Cases are subdirectories holding input.png, mask.png, gt.png, optional ref.png and
/// ref_mask.png, and meta.json with source_text, target_text and task. Sorted by name.
std::vector<EvalCase> load_dataset(const std::filesystem::path& dir);

/// Output for each case: <dir>/<id>.png or <dir>/<id>/output.png.
std::vector<Image> load_outputs(const std::filesystem::path& dir, const std::vector<EvalCase>& cases);

}  // namespace textforge::eval
