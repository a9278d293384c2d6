from .core import (
    ANNEX_K_LUMINANCE,
    GAUSSIAN_3X3,
    SHARPEN_3X3,
    ZIGZAG,
    CoefficientPlane,
    FilterSpec,
    InternalCoder,
    Modification,
    QuantTable,
    compress,
    decompress,
    dequantize,
    forward_block,
    get_filter,
    inverse_block,
    quant_table_from_qf,
    quantize,
    recompress,
    recompress_coeffs,
)
from .stream import JpegFile, parse, read_jpeg, serialize, write_jpeg
