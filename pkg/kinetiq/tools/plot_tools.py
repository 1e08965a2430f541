"""Vector-graphic figures of estimated motions.

Figures are built on `matplotlib.figure.Figure` directly, without pyplot, so
they can be produced from worker processes and headless runs. Every function
writes an SVG document and returns the geometry it drew.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import os

from matplotlib.figure import Figure
import numpy as np

from kinetiq.analysis.gait_cycles import GaitCycles
from kinetiq.analysis.metrics import EvaluationConfig
from kinetiq.errors import InvalidInputError
from kinetiq.model.body import BodyConstants, SEGMENTS
from kinetiq.model.contact import AnkleContactState, FootGeometry, ContactParams, contact_point
from kinetiq.model.kinematics import (DOFS, GeneralizedState, SIDES, TORQUE_DOFS,
                                      forward_kinematics, propagate_point)

__all__ = ['StickFigure', 'CurveBand', 'emit_stick_figure', 'emit_cycle_plots',
           'cycle_channels']

logger = logging.getLogger(__name__)

SIDE_COLORS = {'l': 'tab:red', 'r': 'tab:blue'}
POINTS_PER_INCH = 72


@dataclass
class StickFigure:
    """Geometry of a stick figure document in pixel coordinates.

    Args:
        filepath: SVG file.
        poses: Sample indices of the drawn poses.
        segments: ``(sample, name, (x0, y0), (x1, y1))`` per drawn segment,
            with y pointing up.
        arrows: ``(sample, side, (x, y), (dx, dy))`` per force arrow.
    """
    filepath: str
    poses: List[int] = field(default_factory=list)
    segments: List[Tuple[int, str, Tuple[float, float], Tuple[float, float]]] = \
        field(default_factory=list)
    arrows: List[Tuple[int, str, Tuple[float, float], Tuple[float, float]]] = \
        field(default_factory=list)


def _pose_points(q: np.ndarray, body: BodyConstants) -> Dict:
    zeros = np.zeros_like(q)
    points = forward_kinematics(GeneralizedState(q=q, qdot=zeros, qddot=zeros), body)
    points['trunk_top'] = propagate_point(points['root'], 0.,
                                          body.length[SEGMENTS.index('trunk')])
    return points


def _xy(point, k: int, scale: float) -> Tuple[float, float]:
    return float(np.asarray(point.x)[k]) * scale, float(np.asarray(point.y)[k]) * scale


def _save(fig: Figure, filepath: str):
    folder = os.path.dirname(filepath)
    if folder:
        os.makedirs(folder, exist_ok=True)
    fig.savefig(filepath, format='svg')
    logger.debug(f'Saved figure {filepath}')


def emit_stick_figure(q: np.ndarray,
                      body: BodyConstants,
                      filepath: str,
                      dt: float = 0.01,
                      grf: np.ndarray = None,
                      config: EvaluationConfig = EvaluationConfig(),
                      contact: ContactParams = ContactParams()) -> StickFigure:
    """Stick figure of a motion with ground reaction force arrows.

    Poses are drawn every ``config.stick_interval`` and force arrows every
    ``config.grf_interval``. One meter spans ``config.pixels_per_meter``
    pixels, and the figure is sized so one pixel is one SVG user unit.

    Args:
        q: Generalized coordinates ``(T, 9)``.
        body: Body constants.
        filepath: Output SVG file.
        dt: Sample interval (s).
        grf: Forces ``(T, 2, 2)`` as ``(F_x, F_y)`` per foot in body weights.
            Arrows start at the foot contact points.
        config: Figure settings.
        contact: Contact parameters locating the contact points.
    """
    q = np.asarray(q, dtype=float).reshape(-1, len(DOFS))
    if grf is not None and len(grf) != len(q):
        raise InvalidInputError(f'{len(grf)} force samples for {len(q)} poses')
    ppm = config.pixels_per_meter
    result = StickFigure(filepath=filepath)
    fig = Figure()
    ax = fig.add_axes([0, 0, 1, 1])
    ax.set_axis_off()

    if not len(q):
        fig.set_size_inches(1, 1)
        _save(fig, filepath)
        return result

    points = _pose_points(q, body)
    stride = max(int(round(config.stick_interval / dt)), 1)
    result.poses = list(range(0, len(q), stride))
    chains = {'trunk': [('root', 'trunk_top')]}
    for side in SIDES:
        chains[side] = [(f'hip_{side}', f'knee_{side}'),
                        (f'knee_{side}', f'ankle_{side}'),
                        (f'heel_{side}', f'toe_{side}')]
    for k in result.poses:
        for chain, pairs in chains.items():
            for start, stop in pairs:
                p0, p1 = _xy(points[start], k, ppm), _xy(points[stop], k, ppm)
                result.segments.append((k, f'{start}-{stop}', p0, p1))
                line, = ax.plot([p0[0], p1[0]], [p0[1], p1[1]], lw=1.5,
                                color=SIDE_COLORS.get(chain, 'black'))
                line.set_gid(f'pose{k}_{start}-{stop}')

    if grf is not None:
        grf = np.asarray(grf, dtype=float)
        grf_stride = max(int(round(config.grf_interval / dt)), 1)
        for s, side in enumerate(SIDES):
            ankle = AnkleContactState.from_points(points[f'ankle_{side}'], 0.)
            anchor = contact_point(ankle, FootGeometry.from_body(body, side),
                                   contact.blend_gain)
            for k in range(0, len(q), grf_stride):
                if not np.any(grf[k, s]):
                    continue
                x, y = _xy(anchor, k, ppm)
                dx, dy = grf[k, s] * config.grf_scale * ppm
                result.arrows.append((k, side, (x, y), (float(dx), float(dy))))
                arrow = ax.arrow(x, y, dx, dy, color='0.6', width=0.5,
                                 length_includes_head=True, head_width=3)
                arrow.set_gid(f'grf{k}_{side}')

    coordinates = [p for _, _, p0, p1 in result.segments for p in (p0, p1)]
    coordinates += [(x + dx, y + dy) for _, _, (x, y), (dx, dy) in result.arrows]
    coordinates = np.array(coordinates)
    margin = 0.05 * ppm
    lower = coordinates.min(axis=0) - margin
    upper = coordinates.max(axis=0) + margin
    ax.set_xlim(lower[0], upper[0])
    ax.set_ylim(lower[1], upper[1])
    fig.set_dpi(POINTS_PER_INCH)
    fig.set_size_inches(*((upper - lower) / POINTS_PER_INCH))
    _save(fig, filepath)
    return result


@dataclass
class CurveBand:
    """Mean curve and standard deviation band of one cycle channel."""
    stream: str
    channel: str
    mean: np.ndarray
    half_width: np.ndarray
    reference_mean: Optional[np.ndarray] = None
    reference_half_width: Optional[np.ndarray] = None


def cycle_channels(key: str, cycles: np.ndarray) -> Tuple[List[str], np.ndarray, str]:
    """Channel names, values ``(n, samples, channels)`` and unit of a stream.

    Angles are converted to degrees, torques and forces to percent.
    """
    cycles = np.asarray(cycles, dtype=float)
    n, samples = cycles.shape[:2]
    if key == 'q':
        return list(DOFS[2:]), np.rad2deg(cycles[..., 2:]), 'deg'
    elif key == 'tau':
        return list(TORQUE_DOFS), 100 * cycles, 'BWBH%'
    elif key == 'grf':
        names = [f'{axis}_{side}' for side in SIDES for axis in ('fx', 'fy')]
        return names, 100 * cycles.reshape(n, samples, -1), 'BW%'
    values = cycles.reshape(n, samples, -1)
    return [f'{key}{k}' for k in range(values.shape[-1])], values, ''


def emit_cycle_plots(estimate: GaitCycles,
                     folder: str,
                     reference: GaitCycles = None,
                     streams: Sequence[str] = ('q', 'tau', 'grf')) -> Dict[str, List[CurveBand]]:
    """Average gait cycles with standard deviation bands.

    One SVG per stream, named ``cycles_<stream>.svg``, with a panel per
    channel. Reference averages are drawn dashed with their own band.

    Returns:
        Drawn curves per stream.
    """
    bands = {}
    for key in streams:
        if key not in estimate.cycles:
            continue
        names, values, unit = cycle_channels(key, estimate.cycles[key])
        if reference is not None and key in reference.cycles:
            _, ref_values, _ = cycle_channels(key, reference.cycles[key])
        else:
            ref_values = None

        fig = Figure(figsize=(2.5 * len(names), 2.5))
        axes = fig.subplots(1, len(names), squeeze=False)[0]
        percent = np.linspace(0, 100, values.shape[1])
        bands[key] = []
        for c, (name, ax) in enumerate(zip(names, axes)):
            band = CurveBand(stream=key, channel=name, mean=np.zeros(len(percent)),
                             half_width=np.zeros(len(percent)))
            if len(values):
                band.mean = values[:, :, c].mean(axis=0)
                band.half_width = values[:, :, c].std(axis=0)
                ax.plot(percent, band.mean, color='tab:blue', label='estimate')
                ax.fill_between(percent, band.mean - band.half_width,
                                band.mean + band.half_width, color='tab:blue', alpha=0.3)
            if ref_values is not None and len(ref_values):
                band.reference_mean = ref_values[:, :, c].mean(axis=0)
                band.reference_half_width = ref_values[:, :, c].std(axis=0)
                ax.plot(percent, band.reference_mean, color='0.3', ls='--',
                        label='reference')
                ax.fill_between(percent, band.reference_mean - band.reference_half_width,
                                band.reference_mean + band.reference_half_width,
                                color='0.5', alpha=0.2)
            ax.set_title(name)
            ax.set_xlabel('gait cycle (%)')
            if c == 0:
                ax.set_ylabel(unit)
            bands[key].append(band)
        axes[0].legend(loc='best', fontsize='small')
        fig.tight_layout()
        _save(fig, os.path.join(folder, f'cycles_{key}.svg'))
    return bands
