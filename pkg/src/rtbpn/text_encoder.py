import math
from typing import Sequence, Union

import torch
import torch.nn as nn


class TextEncoder(nn.Module):
    """Token embedding followed by a bidirectional GRU.

    Row i of the output concatenates the forward state after reading tokens
    [0..i] and the backward state after reading tokens [i..n_q-1].
    """

    def __init__(self, vocab_size: int, embed_dim: int = 300, hidden_size: int = 128,
                 freeze_embeddings: bool = False, embed_init_std: float = 0.01):
        super().__init__()
        self.embed_init_std = embed_init_std
        self.vocab_size = vocab_size
        self.hidden_size = hidden_size
        self.embedding = nn.Embedding(vocab_size, embed_dim)
        self.gru = nn.GRU(embed_dim, hidden_size, batch_first=True, bidirectional=True)
        self.reset_parameters()
        self.embedding.weight.requires_grad_(not freeze_embeddings)

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden_size

    def reset_parameters(self):
        nn.init.normal_(self.embedding.weight, 0.0, self.embed_init_std)
        bound = 1.0 / math.sqrt(self.hidden_size)
        for p in self.gru.parameters():
            nn.init.uniform_(p, -bound, bound)

    def forward(self, token_ids: Union[Sequence[int], torch.Tensor]) -> torch.Tensor:
        ids = torch.as_tensor(token_ids, dtype=torch.long, device=self.embedding.weight.device)
        if ids.dim() != 1 or ids.numel() < 1:
            raise ValueError("token_ids must be a non-empty 1D sequence")
        if int(ids.min()) < 0 or int(ids.max()) >= self.vocab_size:
            raise ValueError(f"token id out of vocabulary range [0, {self.vocab_size})")
        out, _ = self.gru(self.embedding(ids).unsqueeze(0))
        return out.squeeze(0)


def encode_query(token_ids, encoder: TextEncoder) -> torch.Tensor:
    return encoder(token_ids)
