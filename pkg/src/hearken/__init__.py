"""hearken: audio event recognition and highlight scoring toolkit.

Pipeline: waveform -> log-filterbank feature patches -> deep CNN classifier
(trained from scratch, with mixing/warp augmentation and multiple-instance
variants) -> L2-normalized deep audio features -> ranking-loss highlight
scorer evaluated by mean average precision.
"""

__version__ = "0.1.0"
