#include "lfc/run_config.hpp"

#include <sstream>

#include "lfc/adaptation.hpp"
#include "lfc/errors.hpp"
#include "lfc/textio.hpp"

namespace lfc {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + " is not key = value");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        try {
            if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "epochs") cfg.epochs = std::stoi(value);
            else if (key == "batch_size") cfg.batch_size = std::stoi(value);
            else if (key == "lr") cfg.lr = std::stod(value);
            else if (key == "tau") cfg.tau = std::stod(value);
            else if (key == "r_max") cfg.r_max = std::stoi(value);
            else if (key == "delta") cfg.delta = std::stod(value);
            else if (key == "ablation") cfg.ablation = value;
            else if (key == "data_dir") cfg.data_dir = value;
            else if (key == "out_dir") cfg.out_dir = value;
            else throw ConfigError("unknown config key '" + key + "'");
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' has an unparsable value '" + value + "'");
        }
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    return from_text(read_text_file(path));
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    os << "seed = " << seed << "\n";
    os << "epochs = " << epochs << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "lr = " << fmt_double(lr) << "\n";
    os << "tau = " << fmt_double(tau) << "\n";
    os << "r_max = " << r_max << "\n";
    os << "delta = " << fmt_double(delta) << "\n";
    os << "ablation = " << ablation << "\n";
    os << "data_dir = " << data_dir << "\n";
    os << "out_dir = " << out_dir << "\n";
    return os.str();
}

void RunConfig::validate() const {
    if (epochs < 0) throw ConfigError("config: epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (lr < 0.0) throw ConfigError("config: lr must be >= 0");
    if (tau < 0.0 || tau >= 1.0) throw ConfigError("config: tau must lie in [0,1)");
    if (r_max < 1) throw ConfigError("config: r_max must be >= 1");
    if (delta <= 0.0) throw ConfigError("config: delta must be positive");
    ablation_from_string(ablation);  // throws on unknown mode
}

}  // namespace lfc
