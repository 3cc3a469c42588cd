#include "promptemb/quantize.hpp"

#include <algorithm>
#include <cmath>

#include "promptemb/errors.hpp"

namespace promptemb {

QuantizedTensor quantize_blockwise(const std::vector<float>& values) {
    QuantizedTensor q;
    q.count = values.size();
    q.codes.assign((values.size() + 1) / 2, 0);
    const std::size_t blocks = (values.size() + kQuantBlock - 1) / kQuantBlock;
    q.scales.assign(blocks, 0.0f);

    for (std::size_t blk = 0; blk < blocks; ++blk) {
        const std::size_t begin = blk * kQuantBlock;
        const std::size_t end = std::min(values.size(), begin + kQuantBlock);
        float absmax = 0.0f;
        for (std::size_t i = begin; i < end; ++i) {
            if (!std::isfinite(values[i]))
                throw Error(ErrorKind::data, "cannot quantize non-finite value");
            absmax = std::max(absmax, std::fabs(values[i]));
        }
        const float scale = absmax / 7.0f;
        q.scales[blk] = scale;
        for (std::size_t i = begin; i < end; ++i) {
            int code = 0;
            if (scale > 0.0f) {
                const long r = std::lround(static_cast<double>(values[i]) /
                                           static_cast<double>(scale));
                code = static_cast<int>(std::clamp(r, -7l, 7l));
            }
            const std::uint8_t nibble = static_cast<std::uint8_t>(code + 8);
            if (i % 2 == 0)
                q.codes[i / 2] |= nibble;
            else
                q.codes[i / 2] |= static_cast<std::uint8_t>(nibble << 4);
        }
    }
    return q;
}

std::vector<float> dequantize_blockwise(const QuantizedTensor& q) {
    std::vector<float> out(q.count);
    for (std::size_t i = 0; i < q.count; ++i)
        out[i] = static_cast<float>(q.code_at(i)) * q.scales[i / kQuantBlock];
    return out;
}

}  // namespace promptemb
