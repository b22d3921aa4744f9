#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "rlens/lens.hpp"
#include "rlens/studies.hpp"

namespace rlens {

std::string sha256_hex(const std::string& bytes);
std::string sha256_hex_file(const std::string& path);

/// Writes via a temp file + rename so partially written outputs never appear
/// under the final name.
void atomic_write(const std::string& path, const std::string& bytes);

void write_json_file(const std::string& path, const nlohmann::json& j);
void write_jsonl_file(const std::string& path, const std::vector<nlohmann::json>& lines);

/// Rows are emitted as-is; the caller formats numbers (csv_num gives a
/// round-trippable double rendering).
void write_csv_file(const std::string& path, const std::vector<std::string>& header,
                    const std::vector<std::vector<std::string>>& rows);
std::string csv_num(double v);

/// Grid-cell heatmap, brighter = larger value; absent cells hatched gray.
std::string svg_heatmap(const Heatmap& map, const std::string& title);

/// Simple multi-series line plot (used for Pass@K curves).
std::string svg_line_plot(const std::vector<std::string>& series_names,
                          const std::vector<std::vector<double>>& series_y,
                          const std::string& title, const std::string& x_label,
                          const std::string& y_label);

/// Heatmap CSV: one row per layer, one column per entropy bin; absent cells
/// are empty fields.
void write_heatmap_csv(const std::string& path, const Heatmap& map, bool normalized);

struct ManifestEntry {
    std::string name; // path relative to the run directory
    std::string sha256;
};

/// Self-describing run record: command, config hash, inputs, outputs, plus
/// any command-specific extra fields. Written last so a complete manifest
/// implies complete outputs.
void write_manifest(const std::string& run_dir, const std::string& command,
                    const nlohmann::json& config, const std::vector<std::string>& input_paths,
                    const std::vector<std::string>& output_names,
                    const nlohmann::json& extra = nlohmann::json::object());

} // namespace rlens
