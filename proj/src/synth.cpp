#include "lfc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "lfc/errors.hpp"
#include "lfc/rng.hpp"
#include "lfc/textio.hpp"

namespace lfc {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string sample_file(const char* prefix, int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%05d.pgm", prefix, id);
    return buf;
}

void box_blur(Tensor4& img, int radius) {
    if (radius <= 0) return;
    const int h = img.h, w = img.w;
    Tensor4 out(1, 1, h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            int count = 0;
            for (int dy = -radius; dy <= radius; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= h) continue;
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int xx = x + dx;
                    if (xx < 0 || xx >= w) continue;
                    acc += img.at(0, 0, yy, xx);
                    ++count;
                }
            }
            out.at(0, 0, y, x) = acc / count;
        }
    }
    img = std::move(out);
}

void write_pgm16(const std::filesystem::path& path, const Tensor4& img) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "P5\n" << img.w << " " << img.h << "\n65535\n";
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const double v = std::clamp(img.at(0, 0, y, x), 0.0, 1.0);
            const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
            const char bytes[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xff)};
            out.write(bytes, 2);
        }
    }
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_pgm8(const std::filesystem::path& path, const Tensor4& labels) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "P5\n" << labels.w << " " << labels.h << "\n255\n";
    for (int y = 0; y < labels.h; ++y) {
        for (int x = 0; x < labels.w; ++x) {
            const char b = static_cast<char>(static_cast<std::uint8_t>(labels.at(0, 0, y, x)));
            out.write(&b, 1);
        }
    }
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

struct PgmHeader {
    int w = 0, h = 0, maxval = 0;
    std::size_t data_offset = 0;
};

PgmHeader parse_pgm_header(const std::string& bytes, const std::string& path) {
    std::size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (pos < bytes.size() && bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        return bytes.substr(start, pos - start);
    };
    if (next_token() != "P5") throw IoError("malformed PGM header (not P5) in '" + path + "'");
    PgmHeader hd;
    try {
        hd.w = std::stoi(next_token());
        hd.h = std::stoi(next_token());
        hd.maxval = std::stoi(next_token());
    } catch (const std::exception&) {
        throw IoError("malformed PGM header in '" + path + "'");
    }
    if (hd.w < 1 || hd.h < 1) throw IoError("malformed PGM header in '" + path + "'");
    hd.data_offset = pos + 1;  // single whitespace after maxval
    return hd;
}

Tensor4 read_pgm16(const std::filesystem::path& path) {
    const std::string bytes = read_text_file(path);
    const PgmHeader hd = parse_pgm_header(bytes, path.string());
    if (hd.maxval != 65535) {
        throw IoError("wrong maxval " + std::to_string(hd.maxval) + " in '" + path.string() +
                      "', expected 65535");
    }
    const std::size_t need = static_cast<std::size_t>(hd.w) * hd.h * 2;
    if (bytes.size() - hd.data_offset != need) {
        throw IoError("size mismatch in '" + path.string() + "': payload " +
                      std::to_string(bytes.size() - hd.data_offset) + " bytes, expected " +
                      std::to_string(need));
    }
    Tensor4 img(1, 1, hd.h, hd.w);
    const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data() + hd.data_offset);
    for (int y = 0; y < hd.h; ++y) {
        for (int x = 0; x < hd.w; ++x) {
            const std::size_t i = (static_cast<std::size_t>(y) * hd.w + x) * 2;
            const std::uint16_t q = static_cast<std::uint16_t>((p[i] << 8) | p[i + 1]);
            img.at(0, 0, y, x) = static_cast<double>(q) / 65535.0;
        }
    }
    return img;
}

Tensor4 read_pgm8(const std::filesystem::path& path) {
    const std::string bytes = read_text_file(path);
    const PgmHeader hd = parse_pgm_header(bytes, path.string());
    if (hd.maxval != 255) {
        throw IoError("wrong maxval " + std::to_string(hd.maxval) + " in '" + path.string() +
                      "', expected 255");
    }
    const std::size_t need = static_cast<std::size_t>(hd.w) * hd.h;
    if (bytes.size() - hd.data_offset != need) {
        throw IoError("size mismatch in '" + path.string() + "': payload " +
                      std::to_string(bytes.size() - hd.data_offset) + " bytes, expected " +
                      std::to_string(need));
    }
    Tensor4 labels(1, 1, hd.h, hd.w);
    const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data() + hd.data_offset);
    for (std::size_t i = 0; i < need; ++i) labels.data[i] = static_cast<double>(p[i]);
    return labels;
}

std::map<std::string, std::string> parse_kv(const std::string& text, std::size_t* lines_consumed) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t consumed = 0;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') {
            ++consumed;
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) break;  // sample rows follow
        kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
        ++consumed;
    }
    if (lines_consumed) *lines_consumed = consumed;
    return kv;
}

void apply_spec_kv(DomainSpec& spec, const std::map<std::string, std::string>& kv) {
    for (const auto& [key, value] : kv) {
        if (key == "name") spec.name = value;
        else if (key == "background_level") spec.background_level = std::stod(value);
        else if (key == "disc_level") spec.disc_level = std::stod(value);
        else if (key == "cup_level") spec.cup_level = std::stod(value);
        else if (key == "contrast_gamma") spec.contrast_gamma = std::stod(value);
        else if (key == "noise_sigma") spec.noise_sigma = std::stod(value);
        else if (key == "blur_radius") spec.blur_radius = std::stoi(value);
        else if (key == "vignette_strength") spec.vignette_strength = std::stod(value);
        else throw ConfigError("unknown domain spec key '" + key + "'");
    }
}

std::string spec_kv(const DomainSpec& spec) {
    std::ostringstream os;
    os << "name=" << spec.name << "\n";
    os << "background_level=" << fmt_double(spec.background_level) << "\n";
    os << "disc_level=" << fmt_double(spec.disc_level) << "\n";
    os << "cup_level=" << fmt_double(spec.cup_level) << "\n";
    os << "contrast_gamma=" << fmt_double(spec.contrast_gamma) << "\n";
    os << "noise_sigma=" << fmt_double(spec.noise_sigma) << "\n";
    os << "blur_radius=" << spec.blur_radius << "\n";
    os << "vignette_strength=" << fmt_double(spec.vignette_strength) << "\n";
    return os.str();
}

bool photometrically_equal(const DomainSpec& a, const DomainSpec& b) {
    return a.background_level == b.background_level && a.disc_level == b.disc_level &&
           a.cup_level == b.cup_level && a.contrast_gamma == b.contrast_gamma &&
           a.noise_sigma == b.noise_sigma && a.blur_radius == b.blur_radius &&
           a.vignette_strength == b.vignette_strength;
}

}  // namespace

void DomainSpec::validate() const {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in01(background_level) || !in01(disc_level) || !in01(cup_level)) {
        throw ConfigError("domain spec: intensity levels must lie in [0,1]");
    }
    if (contrast_gamma <= 0.0 || noise_sigma < 0.0 || blur_radius < 0 ||
        vignette_strength < 0.0) {
        throw ConfigError("domain spec: gamma must be positive; noise/blur/vignette non-negative");
    }
}

DomainSpec default_source_spec() {
    DomainSpec s;
    s.name = "synthetic-source";
    s.background_level = 0.15;
    s.disc_level = 0.55;
    s.cup_level = 0.9;
    s.contrast_gamma = 1.0;
    s.noise_sigma = 0.02;
    s.blur_radius = 0;
    s.vignette_strength = 0.0;
    return s;
}

DomainSpec default_target_spec() {
    DomainSpec s;
    s.name = "synthetic-target";
    s.background_level = 0.45;
    s.disc_level = 0.62;
    s.cup_level = 0.78;
    s.contrast_gamma = 1.8;
    s.noise_sigma = 0.10;
    s.blur_radius = 1;
    s.vignette_strength = 0.35;
    return s;
}

std::vector<Sample> generate(const DomainSpec& spec, int n, std::uint64_t split_seed,
                             int first_sample_id) {
    spec.validate();
    if (n < 1) throw ConfigError("generate: n must be >= 1");
    const int size = kImageSize;
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const int id = first_sample_id + k;
        // Separate streams so the geometry of a sample id is shared across
        // domains regardless of the photometric settings.
        Rng geom(mix_seed(split_seed, static_cast<std::uint64_t>(id), 0x67656f6dULL));
        Rng noise(mix_seed(split_seed, static_cast<std::uint64_t>(id), 0x6e6f6973ULL));

        const double rx = geom.uniform(10.0, 18.0);
        const double ry = geom.uniform(10.0, 18.0);
        const double cx = geom.uniform(2.0 + rx, size - 2.0 - rx);
        const double cy = geom.uniform(2.0 + ry, size - 2.0 - ry);
        const double cup_fx = geom.uniform(0.45, 0.70);
        const double cup_fy = geom.uniform(0.45, 0.70);
        const double crx = rx * cup_fx;
        const double cry = ry * cup_fy;

        Sample s;
        s.sample_id = id;
        s.label = Tensor4(1, 1, size, size, 0.0);
        s.image = Tensor4(1, 1, size, size, spec.background_level);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double px = x + 0.5 - cx;
                const double py = y + 0.5 - cy;
                const double disc_d = (px / rx) * (px / rx) + (py / ry) * (py / ry);
                if (disc_d > 1.0) continue;
                const double cup_d = (px / crx) * (px / crx) + (py / cry) * (py / cry);
                if (cup_d <= 1.0) {
                    s.label.at(0, 0, y, x) = 2.0;
                    s.image.at(0, 0, y, x) = spec.cup_level;
                } else {
                    s.label.at(0, 0, y, x) = 1.0;
                    s.image.at(0, 0, y, x) = spec.disc_level;
                }
            }
        }

        // Photometric pipeline: gamma, additive noise, blur, vignette.
        for (double& v : s.image.data) v = std::pow(v, spec.contrast_gamma);
        if (spec.noise_sigma > 0.0) {
            for (double& v : s.image.data) {
                v = std::clamp(v + noise.normal(0.0, spec.noise_sigma), 0.0, 1.0);
            }
        }
        box_blur(s.image, spec.blur_radius);
        if (spec.vignette_strength > 0.0) {
            const double half = size / 2.0;
            const double r_max2 = 2.0 * half * half;
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    const double dx = x + 0.5 - half;
                    const double dy = y + 0.5 - half;
                    const double factor =
                        1.0 - spec.vignette_strength * ((dx * dx + dy * dy) / r_max2);
                    s.image.at(0, 0, y, x) =
                        std::clamp(s.image.at(0, 0, y, x) * std::max(factor, 0.0), 0.0, 1.0);
                }
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

void write_sample(const Sample& s, const std::filesystem::path& dir) {
    write_pgm16(dir / sample_file("img", s.sample_id), s.image);
    write_pgm8(dir / sample_file("lbl", s.sample_id), s.label);
}

Sample read_sample(const std::filesystem::path& dir, int sample_id) {
    Sample s;
    s.sample_id = sample_id;
    s.image = read_pgm16(dir / sample_file("img", sample_id));
    s.label = read_pgm8(dir / sample_file("lbl", sample_id));
    return s;
}

void write_manifest(const Manifest& m, const std::filesystem::path& dir) {
    std::ostringstream os;
    os << "domain=" << m.domain << "\n";
    os << "split=" << m.split << "\n";
    os << "seed=" << m.seed << "\n";
    os << "count=" << m.sample_ids.size() << "\n";
    os << spec_kv(m.spec);
    for (int id : m.sample_ids) {
        os << id << "\t" << sample_file("img", id) << "\t" << sample_file("lbl", id) << "\n";
    }
    write_text_file(dir / "manifest.txt", os.str());
}

Manifest read_manifest(const std::filesystem::path& dir) {
    const std::string text = read_text_file(dir / "manifest.txt");
    std::size_t header_lines = 0;
    const auto kv = parse_kv(text, &header_lines);
    Manifest m;
    auto need = [&kv, &dir](const char* key) -> std::string {
        auto it = kv.find(key);
        if (it == kv.end()) {
            throw IoError("manifest in '" + dir.string() + "' missing key '" + key + "'");
        }
        return it->second;
    };
    m.domain = need("domain");
    m.split = need("split");
    m.seed = std::stoull(need("seed"));
    const std::size_t count = std::stoull(need("count"));
    std::map<std::string, std::string> spec_fields;
    for (const auto& [key, value] : kv) {
        if (key == "domain" || key == "split" || key == "seed" || key == "count") continue;
        spec_fields[key] = value;
    }
    apply_spec_kv(m.spec, spec_fields);

    std::istringstream in(text);
    std::string line;
    for (std::size_t i = 0; i < header_lines && std::getline(in, line); ++i) {}
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        std::istringstream row(t);
        std::string id_str, img, lbl;
        if (!std::getline(row, id_str, '\t') || !std::getline(row, img, '\t') ||
            !std::getline(row, lbl, '\t')) {
            throw IoError("manifest in '" + dir.string() + "' has a malformed sample row");
        }
        if (!std::filesystem::exists(dir / img) || !std::filesystem::exists(dir / lbl)) {
            throw IoError("manifest in '" + dir.string() + "' references missing file '" + img +
                          "' or '" + lbl + "'");
        }
        m.sample_ids.push_back(std::stoi(id_str));
    }
    if (m.sample_ids.size() != count) {
        throw IoError("manifest in '" + dir.string() + "': count=" + std::to_string(count) +
                      " but " + std::to_string(m.sample_ids.size()) + " rows present");
    }
    return m;
}

void benchmark(const DomainSpec& source_spec, const DomainSpec& target_spec,
               const BenchmarkSizes& sizes, std::uint64_t seed,
               const std::filesystem::path& out_dir, bool force) {
    source_spec.validate();
    target_spec.validate();
    if (photometrically_equal(source_spec, target_spec)) {
        throw ConfigError("benchmark: source and target specs are photometrically identical; "
                          "no domain shift exists");
    }
    if (sizes.source_train < 1 || sizes.target_train < 1 || sizes.target_test < 1) {
        throw ConfigError("benchmark: all split sizes must be >= 1");
    }
    namespace fs = std::filesystem;
    if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force) {
        throw FsConflictError("benchmark: output directory '" + out_dir.string() +
                              "' is not empty (use force to overwrite)");
    }

    struct SplitPlan {
        const char* domain;
        const char* split;
        const DomainSpec* spec;
        int count;
        int first_id;
        fs::path dir;
    };
    const SplitPlan plans[] = {
        {"source", "train", &source_spec, sizes.source_train, 0, out_dir / "source" / "train"},
        {"target", "train", &target_spec, sizes.target_train, 10000, out_dir / "target" / "train"},
        {"target", "test", &target_spec, sizes.target_test, 20000, out_dir / "target" / "test"},
    };
    for (const SplitPlan& plan : plans) {
        fs::create_directories(plan.dir);
        const auto samples = generate(*plan.spec, plan.count, seed, plan.first_id);
        Manifest m;
        m.domain = plan.domain;
        m.split = plan.split;
        m.seed = seed;
        m.spec = *plan.spec;
        for (const Sample& s : samples) {
            write_sample(s, plan.dir);
            m.sample_ids.push_back(s.sample_id);
        }
        write_manifest(m, plan.dir);
    }
}

Dataset load_dataset(const std::filesystem::path& split_dir) {
    Dataset ds;
    ds.manifest = read_manifest(split_dir);
    ds.images.reserve(ds.manifest.sample_ids.size());
    ds.labels.reserve(ds.manifest.sample_ids.size());
    for (int id : ds.manifest.sample_ids) {
        Sample s = read_sample(split_dir, id);
        ds.images.push_back(std::move(s.image));
        ds.labels.push_back(std::move(s.label));
        ds.sample_ids.push_back(id);
    }
    return ds;
}

DomainSpec read_spec_file(const std::filesystem::path& path) {
    DomainSpec spec;
    const auto kv = parse_kv(read_text_file(path), nullptr);
    apply_spec_kv(spec, kv);
    spec.validate();
    return spec;
}

void write_spec_file(const DomainSpec& spec, const std::filesystem::path& path) {
    write_text_file(path, spec_kv(spec));
}

}  // namespace lfc
