#include "rlens/reports.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <openssl/evp.h>

#include "rlens/errors.hpp"

namespace rlens {

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw NumericError("sha256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(static_cast<size_t>(len) * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

std::string sha256_hex_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open for hashing: " + path);
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha256_hex(bytes);
}

void atomic_write(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot open for writing: " + tmp);
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out.good()) {
            throw DataError("write failed: " + tmp);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw DataError("rename " + tmp + " -> " + path + " failed: " + ec.message());
    }
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
    atomic_write(path, j.dump(2) + "\n");
}

void write_jsonl_file(const std::string& path, const std::vector<nlohmann::json>& lines) {
    std::string out;
    for (const nlohmann::json& j : lines) {
        out += j.dump();
        out += "\n";
    }
    atomic_write(path, out);
}

std::string csv_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_csv_file(const std::string& path, const std::vector<std::string>& header,
                    const std::vector<std::vector<std::string>>& rows) {
    std::string out;
    for (size_t i = 0; i < header.size(); ++i) {
        if (i) out += ",";
        out += header[i];
    }
    out += "\n";
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out += ",";
            out += row[i];
        }
        out += "\n";
    }
    atomic_write(path, out);
}

void write_heatmap_csv(const std::string& path, const Heatmap& map, bool normalized) {
    std::vector<std::string> header = {"layer"};
    for (int b = 0; b < map.bins; ++b) {
        header.push_back("bin" + std::to_string(b));
    }
    std::vector<std::vector<std::string>> rows;
    for (size_t r = 0; r < map.layers.size(); ++r) {
        std::vector<std::string> row = {std::to_string(map.layers[r])};
        for (int b = 0; b < map.bins; ++b) {
            if (map.counts[r][static_cast<size_t>(b)] == 0) {
                row.emplace_back(""); // absent, not zero
            } else {
                const auto& grid = normalized ? map.normalized : map.raw;
                row.push_back(csv_num(grid[r][static_cast<size_t>(b)]));
            }
        }
        rows.push_back(std::move(row));
    }
    write_csv_file(path, header, rows);
}

namespace {

std::string color_for(double t) {
    // dark blue -> yellow ramp; brighter = larger
    t = std::clamp(t, 0.0, 1.0);
    const int r = static_cast<int>(20 + 235 * t);
    const int g = static_cast<int>(24 + 210 * t);
    const int b = static_cast<int>(90 + 40 * (1.0 - t));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return buf;
}

} // namespace

std::string svg_heatmap(const Heatmap& map, const std::string& title) {
    const int cell = 34;
    const int left = 70, top = 40;
    const int width = left + map.bins * cell + 20;
    const int height = top + static_cast<int>(map.layers.size()) * cell + 50;
    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
           "\" height=\"" + std::to_string(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + std::to_string(left) + "\" y=\"20\" font-family=\"monospace\" font-size=\"14\">" +
           title + "</text>\n";
    for (size_t r = 0; r < map.layers.size(); ++r) {
        svg += "<text x=\"8\" y=\"" + std::to_string(top + static_cast<int>(r) * cell + 22) +
               "\" font-family=\"monospace\" font-size=\"12\">layer " +
               std::to_string(map.layers[r]) + "</text>\n";
        for (int b = 0; b < map.bins; ++b) {
            const int x = left + b * cell;
            const int y = top + static_cast<int>(r) * cell;
            std::string fill;
            if (map.counts[r][static_cast<size_t>(b)] == 0) {
                fill = "#cccccc";
            } else {
                fill = color_for(map.normalized[r][static_cast<size_t>(b)]);
            }
            svg += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"" +
                   std::to_string(cell - 2) + "\" height=\"" + std::to_string(cell - 2) +
                   "\" fill=\"" + fill + "\"/>\n";
        }
    }
    svg += "<text x=\"" + std::to_string(left) + "\" y=\"" + std::to_string(height - 14) +
           "\" font-family=\"monospace\" font-size=\"12\">low entropy -&gt; high entropy</text>\n";
    svg += "</svg>\n";
    return svg;
}

std::string svg_line_plot(const std::vector<std::string>& series_names,
                          const std::vector<std::vector<double>>& series_y,
                          const std::string& title, const std::string& x_label,
                          const std::string& y_label) {
    const int width = 520, height = 360;
    const int left = 60, right = 20, top = 40, bottom = 50;
    const int plot_w = width - left - right;
    const int plot_h = height - top - bottom;
    size_t max_n = 1;
    double y_min = 0.0, y_max = 1e-12;
    for (const auto& s : series_y) {
        max_n = std::max(max_n, s.size());
        for (double v : s) {
            y_min = std::min(y_min, v);
            y_max = std::max(y_max, v);
        }
    }
    if (y_max <= y_min) y_max = y_min + 1.0;
    static const char* palette[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b"};

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
           "\" height=\"" + std::to_string(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + std::to_string(left) + "\" y=\"20\" font-family=\"monospace\" font-size=\"14\">" +
           title + "</text>\n";
    svg += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + std::to_string(top) + "\" x2=\"" +
           std::to_string(left) + "\" y2=\"" + std::to_string(top + plot_h) +
           "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + std::to_string(top + plot_h) +
           "\" x2=\"" + std::to_string(left + plot_w) + "\" y2=\"" + std::to_string(top + plot_h) +
           "\" stroke=\"black\"/>\n";
    for (size_t s = 0; s < series_y.size(); ++s) {
        const auto& ys = series_y[s];
        if (ys.empty()) continue;
        std::string points;
        for (size_t i = 0; i < ys.size(); ++i) {
            const double fx = max_n > 1 ? static_cast<double>(i) / static_cast<double>(max_n - 1) : 0.0;
            const double fy = (ys[i] - y_min) / (y_max - y_min);
            const int x = left + static_cast<int>(fx * plot_w);
            const int y = top + plot_h - static_cast<int>(fy * plot_h);
            points += std::to_string(x) + "," + std::to_string(y) + " ";
        }
        const char* color = palette[s % 5];
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" +
               points + "\"/>\n";
        if (s < series_names.size()) {
            svg += "<text x=\"" + std::to_string(left + plot_w - 140) + "\" y=\"" +
                   std::to_string(top + 16 + 16 * static_cast<int>(s)) +
                   "\" font-family=\"monospace\" font-size=\"12\" fill=\"" + color + "\">" +
                   series_names[s] + "</text>\n";
        }
    }
    svg += "<text x=\"" + std::to_string(left + plot_w / 2 - 20) + "\" y=\"" +
           std::to_string(height - 12) + "\" font-family=\"monospace\" font-size=\"12\">" + x_label +
           "</text>\n";
    svg += "<text x=\"12\" y=\"" + std::to_string(top - 8) +
           "\" font-family=\"monospace\" font-size=\"12\">" + y_label + "</text>\n";
    svg += "</svg>\n";
    return svg;
}

void write_manifest(const std::string& run_dir, const std::string& command,
                    const nlohmann::json& config, const std::vector<std::string>& input_paths,
                    const std::vector<std::string>& output_names, const nlohmann::json& extra) {
    nlohmann::json manifest;
    for (auto it = extra.begin(); it != extra.end(); ++it) {
        manifest[it.key()] = it.value();
    }
    manifest["command"] = command;
    manifest["config_sha256"] = sha256_hex(config.dump());
    nlohmann::json inputs = nlohmann::json::object();
    for (const std::string& p : input_paths) {
        inputs[p] = sha256_hex_file(p);
    }
    manifest["inputs"] = std::move(inputs);
    nlohmann::json outputs = nlohmann::json::object();
    std::vector<std::string> sorted_names = output_names;
    std::sort(sorted_names.begin(), sorted_names.end());
    for (const std::string& name : sorted_names) {
        outputs[name] = sha256_hex_file(run_dir + "/" + name);
    }
    manifest["outputs"] = std::move(outputs);
    write_json_file(run_dir + "/manifest.json", manifest);
}

} // namespace rlens
