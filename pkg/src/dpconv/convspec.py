from dataclasses import dataclass, asdict


class ShapeError(ValueError):
    """Raised when tensor, mask or layer geometry do not line up."""


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one (partial) convolution layer.

    The kernel is (2*half_height + 1) x (2*half_width + 1) taps, spread
    ``dilation`` pixels apart.  ``mask_threshold`` is the number of valid
    taps a window needs for its output mask bit to be set.
    """

    half_height: int
    half_width: int
    c_in: int = 1
    c_out: int = 1
    dilation: int = 1
    stride: int = 1
    padding: int = 0
    mask_threshold: int = 1

    def __post_init__(self):
        if self.half_height < 0 or self.half_width < 0:
            raise ValueError("kernel half extents must be >= 0")
        if self.dilation < 1 or self.stride < 1:
            raise ValueError("dilation and stride must be >= 1")
        if self.padding < 0:
            raise ValueError("padding must be >= 0")
        if self.c_in < 1 or self.c_out < 1:
            raise ValueError("channel counts must be positive")
        if self.mask_threshold < 1:
            raise ValueError("mask_threshold must be >= 1")

    @classmethod
    def square(cls, kernel, c_in=1, c_out=1, *, dilation=1, stride=1, padding=None,
               mask_threshold=1):
        """Square odd kernel; ``padding=None`` picks the size-preserving pad."""
        if kernel % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {kernel}")
        half = kernel // 2
        if padding is None:
            padding = dilation * half
        return cls(half, half, c_in, c_out, dilation, stride, padding, mask_threshold)

    @property
    def kernel_size(self):
        return 2 * self.half_height + 1, 2 * self.half_width + 1

    @property
    def taps(self):
        kh, kw = self.kernel_size
        return kh * kw

    @property
    def weight_shape(self):
        return (self.c_out, self.c_in) + self.kernel_size

    @property
    def extent(self):
        """Effective (dilated) kernel extent per axis."""
        return (2 * self.half_height * self.dilation + 1,
                2 * self.half_width * self.dilation + 1)

    def output_size(self, h, w):
        eh, ew = self.extent
        ph, pw = h + 2 * self.padding, w + 2 * self.padding
        if eh > ph or ew > pw:
            raise ShapeError(
                f"dilated kernel extent {eh}x{ew} exceeds padded input {ph}x{pw}")
        return (ph - eh) // self.stride + 1, (pw - ew) // self.stride + 1

    def with_channels(self, c_in, c_out):
        d = asdict(self)
        d.update(c_in=c_in, c_out=c_out)
        return ConvSpec(**d)

    def to_dict(self):
        return asdict(self)
