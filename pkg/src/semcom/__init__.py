"""Task-adaptive semantic communication testbed.

Transmitter sends a compressed segmentation map, the receiver reconstructs
with a conditional denoising diffusion model, feeds back a label or text
prompt, and the transmitter answers with an attention-masked sparse edge
update — with exact bandwidth accounting throughout.
"""

__version__ = "0.1.0"
