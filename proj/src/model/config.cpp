#include "model/config.hpp"

#include "core/errors.hpp"
#include "spectral/fft.hpp"

namespace sscm::model {

void ModelConfig::validate() const
{
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (channels == 0)
        fail("channels must be positive");
    if (heads == 0 || channels % heads != 0)
        fail("channels (" + std::to_string(channels) + ") must be divisible by heads (" + std::to_string(heads) + ")");
    if (num_blocks == 0)
        fail("num_blocks must be at least 1");
    if (prototypes == 0)
        fail("prototypes must be at least 1");
    if (sub_group == 0)
        fail("sub_group must be at least 1");
    if (ffn_expansion == 0)
        fail("ffn_expansion must be at least 1");
    if (!spectral::is_power_of_two(height) || !spectral::is_power_of_two(width))
        fail("image grid " + std::to_string(height) + "x" + std::to_string(width) + " must be powers of two");
    if (window == 0 || window > height || window > width)
        fail("window " + std::to_string(window) + " does not fit the image grid");
    if (window_stride == 0 || window_stride > window)
        fail("window_stride must lie in [1, window]");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0))
        fail("ema_decay must lie in [0, 1]");
}

satab::SatabConfig ModelConfig::satab_config() const
{
    return {channels, prototypes, sub_group, window, window_stride, heads, ffn_expansion, ema_decay};
}

ModelConfig preset(const std::string& name)
{
    ModelConfig cfg;
    if (name == "desk")
        return cfg;
    if (name == "tiny") {
        cfg.channels = 4;
        cfg.num_blocks = 1;
        cfg.prototypes = 2;
        cfg.sub_group = 4;
        cfg.window = 4;
        cfg.window_stride = 2;
        cfg.heads = 2;
        cfg.height = 8;
        cfg.width = 8;
        return cfg;
    }
    if (name == "paper") {
        cfg.channels = 96;
        cfg.num_blocks = 6;
        cfg.prototypes = 16;
        cfg.sub_group = 128;
        cfg.window = 8;
        cfg.window_stride = 4;
        cfg.heads = 6;
        cfg.height = 256;
        cfg.width = 256;
        return cfg;
    }
    throw ConfigError("unknown preset '" + name + "' (expected desk, tiny or paper)");
}

} // namespace sscm::model
