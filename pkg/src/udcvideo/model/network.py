"""Multi-scale bi-directional recurrent restoration network.

Layout: a UNet-style contracting encoder yields one feature map per scale;
a backward recurrent pass and then a forward pass refine every scale with
a decoupling attention module (DAM); the expanding decoder turns the
forward-pass outputs back into a frame.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core.config import MaskConfig, ModelConfig
from ..geometry import PyramidFlowNet, downsample_flow, warp_bilinear
from ..masks import downsample, flare_map_torch

BACKWARD, FORWARD = "backward", "forward"


def pad_to_multiple(x: torch.Tensor, m: int) -> torch.Tensor:
    """Replicate-pad the last two dims of ``x`` up to a multiple of ``m``."""
    H, W = x.shape[-2:]
    ph, pw = (-H) % m, (-W) % m
    if ph == 0 and pw == 0:
        return x
    lead = x.shape[:-3]
    flat = x.reshape(-1, *x.shape[-3:])
    return F.pad(flat, (0, pw, 0, ph), mode="replicate").reshape(*lead, x.shape[-3], H + ph, W + pw)


def conv3x3(cin: int, cout: int, stride: int = 1, bias: bool = True) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, stride, 1, bias=bias)


# leaky slope keeps channels with a negative mean response trainable
SLOPE = 0.1


def act() -> nn.LeakyReLU:
    return nn.LeakyReLU(SLOPE, inplace=True)


class ResBlock(nn.Module):
    """conv-activation-conv with an identity skip."""

    def __init__(self, ch: int):
        super().__init__()
        self.conv1 = conv3x3(ch, ch)
        self.conv2 = conv3x3(ch, ch)

    def forward(self, x):
        return x + self.conv2(F.leaky_relu(self.conv1(x), SLOPE))


def double_conv(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(conv3x3(cin, cout), act(),
                         conv3x3(cout, cout), act())


class Encoder(nn.Module):
    """Contracting path: one feature map per scale (1/s resolution)."""

    def __init__(self, scales, channels):
        super().__init__()
        self.scales = tuple(scales)
        self.head = nn.Sequential(conv3x3(3, channels[0]), act())
        self.stages = nn.ModuleList()
        prev_s, prev_c = 1, channels[0]
        for s, c in zip(scales, channels):
            layers = []
            for _ in range(int(math.log2(s // prev_s))):
                layers += [conv3x3(prev_c, c, stride=2), act()]
                prev_c = c
            layers.append(double_conv(c, c))
            self.stages.append(nn.Sequential(*layers))
            prev_s = s
        self.out_channels = tuple(channels)

    def forward(self, x):
        feats = []
        x = self.head(x)
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class Decoder(nn.Module):
    """Expanding path fusing coarse-to-fine with skip inputs, then full resolution."""

    def __init__(self, scales, channels, zero_init_head: bool = False):
        super().__init__()
        self.scales = tuple(scales)
        self.ups = nn.ModuleList()
        self.fuses = nn.ModuleList()
        for i in range(len(scales) - 1, 0, -1):
            self.ups.append(nn.Sequential(conv3x3(channels[i], channels[i - 1]), act()))
            self.fuses.append(double_conv(2 * channels[i - 1], channels[i - 1]))
        self.full = nn.Sequential(conv3x3(channels[0], channels[0]), act())
        self.head = conv3x3(channels[0], 3)
        if zero_init_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, feats, size):
        x = feats[-1]
        for j, i in enumerate(range(len(feats) - 1, 0, -1)):
            skip = feats[i - 1]
            x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            x = self.fuses[j](torch.cat([self.ups[j](x), skip], dim=1))
        x = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
        return self.head(self.full(x))


class DAM(nn.Module):
    """Decoupling attention module for one scale and one direction.

    Long-term state is gated by the flare mask, short-term state by the haze
    mask. Both gated features predict an intermediate frame; a sigmoid
    attention map computed from that frame weights the residual refinement
    of each state before the fused update through ``n_resblocks`` blocks.
    """

    def __init__(self, ch: int, cfg: ModelConfig):
        super().__init__()
        self.use_long = cfg.enable_lfr
        self.use_short = cfg.enable_shr
        self.use_masks = cfg.enable_smg
        if self.use_long:
            self.img_long = conv3x3(ch, 3)
            self.feat_long = conv3x3(ch, ch)
        if self.use_short:
            self.img_short = conv3x3(ch, 3)
            self.feat_short = conv3x3(ch, ch)
        if self.use_long or self.use_short:
            self.attn = conv3x3(3, ch)
        self.fuse = nn.Sequential(conv3x3(3 * ch, ch), act())
        self.blocks = nn.Sequential(*[ResBlock(ch) for _ in range(cfg.n_resblocks)])
        self.out = conv3x3(ch, ch)

    def forward(self, feat, long_term, short_term, flow, frame, flare):
        """Returns ``(F_out, new_long, intermediate)``; ``intermediate`` is
        ``None`` when both removal branches are disabled."""
        if feat.shape != long_term.shape or feat.shape != short_term.shape:
            raise ValueError(f"state shapes {tuple(long_term.shape)}/{tuple(short_term.shape)} "
                             f"do not match feature {tuple(feat.shape)}")
        aligned_long = warp_bilinear(long_term, flow)
        aligned_short = warp_bilinear(short_term, flow)
        if self.use_masks:
            m_flare, m_haze = flare, 1.0 - flare
        else:
            m_flare = m_haze = torch.ones_like(flare)
        inter = None
        refined_long, refined_short = aligned_long, aligned_short
        if self.use_long or self.use_short:
            inter = frame
            if self.use_long:
                gated_long = m_flare * aligned_long
                inter = inter + self.img_long(gated_long)
            if self.use_short:
                gated_short = m_haze * aligned_short
                inter = inter + self.img_short(gated_short)
            attn = torch.sigmoid(self.attn(inter))
            if self.use_long:
                refined_long = aligned_long + attn * self.feat_long(gated_long)
            if self.use_short:
                refined_short = aligned_short + attn * self.feat_short(gated_short)
        new_long = self.blocks(self.fuse(torch.cat([feat, refined_long, refined_short], dim=1)))
        return self.out(new_long), new_long, inter


class Restored(NamedTuple):
    output: torch.Tensor  # B x T x 3 x H x W
    # keyed by (scale, direction, t); at the padded resolution / scale
    intermediates: dict[tuple[int, str, int], torch.Tensor]


class D2RNet(nn.Module):
    """Flare/haze-decoupling recurrent video restoration network.

    ``forward(frames, flows_to_prev, flows_to_next)`` takes B x T x 3 x H x W
    display-domain frames. Known-motion flows are B x T x 2 x H x W:
    ``flows_to_prev[:, t]`` pulls frame t-1 onto t and ``flows_to_next[:, t]``
    pulls frame t+1 onto t. Inputs are padded to a multiple of the largest
    scale and the output is cropped back.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig(), mask_cfg: MaskConfig = MaskConfig()):
        super().__init__()
        cfg.validate()
        mask_cfg.validate()
        self.cfg = cfg
        self.tau = mask_cfg.tau
        self.scales = tuple(cfg.scales)
        self.encoder = Encoder(cfg.scales, cfg.channels)
        # separate weights per direction and per scale
        self.dams_backward = nn.ModuleList(DAM(c, cfg) for c in cfg.channels)
        self.dams_forward = nn.ModuleList(DAM(c, cfg) for c in cfg.channels)
        self.decoder = Decoder(cfg.scales, cfg.channels, cfg.zero_init_head)
        self.flownet = PyramidFlowNet(cfg.flow_levels) if cfg.flow == "learned" else None
        self.dam_calls = 0

    # ------------------------------------------------------------------
    def flow_parameters(self):
        return list(self.flownet.parameters()) if self.flownet is not None else []

    def main_parameters(self):
        flow_ids = {id(p) for p in self.flow_parameters()}
        return [p for p in self.parameters() if id(p) not in flow_ids]

    # ------------------------------------------------------------------
    def _pad(self, x: torch.Tensor) -> torch.Tensor:
        return pad_to_multiple(x, self.scales[-1])

    def _flows(self, frames, flows_to_prev, flows_to_next):
        B, T, _, H, W = frames.shape
        zeros = frames.new_zeros(B, T, 2, H, W)
        if self.cfg.flow == "zero" or T == 1:
            return zeros, zeros
        if self.cfg.flow == "known":
            if flows_to_prev is None or flows_to_next is None:
                raise ValueError("known-motion flow requested without a manifest")
            return self._pad(flows_to_prev), self._pad(flows_to_next)
        refs = frames[:, 1:].reshape(-1, 3, H, W)
        prevs = frames[:, :-1].reshape(-1, 3, H, W)
        fwd = self.flownet(refs, prevs).view(B, T - 1, 2, H, W)
        bwd = self.flownet(prevs, refs).view(B, T - 1, 2, H, W)
        to_prev = torch.cat([zeros[:, :1], fwd], dim=1)
        to_next = torch.cat([bwd, zeros[:, :1]], dim=1)
        return to_prev, to_next

    def encode(self, frame: torch.Tensor) -> list[torch.Tensor]:
        m = self.scales[-1]
        if frame.shape[-1] % m or frame.shape[-2] % m:
            raise ValueError(f"frame {tuple(frame.shape[-2:])} not divisible by {m}; pad first")
        return self.encoder(frame)

    def run_pass(self, direction: str, inputs, flows, frames_s, flares_s, intermediates=None):
        """One recurrent pass over time.

        ``inputs[i][t]`` is the per-scale input feature; ``flows[t]`` aligns the
        previously visited frame onto frame t. Returns per-scale output
        sequences indexed by t.
        """
        T = len(inputs[0])
        order = range(T - 1, -1, -1) if direction == BACKWARD else range(T)
        dams = self.dams_backward if direction == BACKWARD else self.dams_forward
        outs = [[None] * T for _ in self.scales]
        long_term = [torch.zeros_like(inputs[i][0]) for i in range(len(self.scales))]
        short_term = [torch.zeros_like(inputs[i][0]) for i in range(len(self.scales))]
        for t in order:
            for i, s in enumerate(self.scales):
                flow = downsample_flow(flows[t], s)
                out, new_long, inter = dams[i](
                    inputs[i][t], long_term[i], short_term[i], flow, frames_s[i][t], flares_s[i][t])
                self.dam_calls += 1
                outs[i][t] = out
                long_term[i] = new_long
                short_term[i] = inputs[i][t]
                if intermediates is not None and inter is not None:
                    intermediates[(s, direction, t)] = inter
        return outs

    def decode(self, feats, size) -> torch.Tensor:
        return self.decoder(feats, size)

    def forward(self, frames, flows_to_prev=None, flows_to_next=None) -> Restored:
        if frames.dim() != 5 or frames.shape[2] != 3:
            raise ValueError(f"expected B x T x 3 x H x W frames, got {tuple(frames.shape)}")
        B, T, _, H0, W0 = frames.shape
        x = self._pad(frames)
        H, W = x.shape[-2:]
        to_prev, to_next = self._flows(x, flows_to_prev, flows_to_next)
        frames_s = [[downsample(x[:, t], s) for t in range(T)] for s in self.scales]
        flares_s = [[flare_map_torch(f, self.tau) for f in per_t] for per_t in frames_s]
        enc = [self.encode(x[:, t]) for t in range(T)]
        inputs = [[enc[t][i] for t in range(T)] for i in range(len(self.scales))]
        intermediates: dict = {}
        back = self.run_pass(BACKWARD, inputs, [to_next[:, t] for t in range(T)],
                             frames_s, flares_s, intermediates)
        fwd = self.run_pass(FORWARD, back, [to_prev[:, t] for t in range(T)],
                            frames_s, flares_s, intermediates)
        outs = []
        for t in range(T):
            y = self.decode([fwd[i][t] for i in range(len(self.scales))], (H, W))
            if self.cfg.global_residual:
                y = x[:, t] + y
            outs.append(y[..., :H0, :W0])
        return Restored(torch.stack(outs, dim=1), intermediates)


def count_params(cfg: ModelConfig) -> int:
    """Number of trainable scalars in a freshly built network."""
    model = D2RNet(cfg)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
