#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "slicerecon/calibrate.hpp"
#include "slicerecon/field.hpp"
#include "slicerecon/metrics.hpp"
#include "slicerecon/phantom.hpp"
#include "slicerecon/types.hpp"
#include "slicerecon/volume.hpp"

namespace slicerecon {

namespace fs = std::filesystem;

// Binary PGM (P5), 8 or 16 bit. Images are scaled to [0, 1]; masks are
// written as 0/255 and read back with a half-maxval threshold.
Image2D read_pgm(const fs::path &path);
void write_pgm(const fs::path &path, const Image2D &img, int bits = 8);
Mask2D read_mask_pgm(const fs::path &path);
void write_mask_pgm(const fs::path &path, const Mask2D &m);

// One JSON header line followed by little-endian float32 planes.
void write_raster(const fs::path &path, const Image2D &img);
Image2D read_raster(const fs::path &path);
void write_field(const fs::path &path, const DisplacementField &phi);
DisplacementField read_field(const fs::path &path);

// JSON header line followed by one byte per voxel, x fastest.
void write_volume(const fs::path &path, const Volume3D &v);
Volume3D read_volume(const fs::path &path);

/// A stack directory holds stack.json plus one file per slice.
void write_mask_stack(const fs::path &dir, const MaskStack &stack);
MaskStack read_mask_stack(const fs::path &dir);
void write_image_stack(const fs::path &dir, const ImageStack &stack);
ImageStack read_image_stack(const fs::path &dir);
void write_fields(const fs::path &dir, const std::vector<DisplacementField> &fields);
std::vector<DisplacementField> read_fields(const fs::path &dir);

std::string read_text(const fs::path &path);
/// Writes atomically enough for our purposes: the file is replaced in full.
void write_text(const fs::path &path, const std::string &text);

// JSON documents. Each *_json returns pretty-printed text ending in a newline.
std::string transforms_json(const std::vector<SimilarityTransform> &transforms,
                            const std::vector<double> &objective = {});
std::vector<SimilarityTransform> parse_transforms(const std::string &text);

std::string ground_truth_json(const Phantom &ph);

std::string scale_json(const StackScale &scale);
/// Reads {"S": ...}.
double parse_scale(const std::string &text);

std::string measurements_json(const Extents &e, double volume_cm3, const PrincipalAxes &axes);

std::string report_json(const EvaluationReport &report);
/// Named reports in one document: {"arms": {name: report, ...}}.
std::string reports_json(const std::vector<std::pair<std::string, EvaluationReport>> &arms);
/// Per-slice Dice values of every arm in a reports document, keyed by arm.
std::vector<std::pair<std::string, std::vector<double>>> parse_report_slice_dice(const std::string &text);

std::string contour_json(const std::vector<std::vector<Point2>> &contours,
                         const std::vector<std::size_t> &segments);

} // namespace slicerecon
