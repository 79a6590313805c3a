import torch
from torch import nn

from app.features.lemmatizer.models import EditLabel


class EditClassifier(nn.Module):
    """FC + ReLU over the encoder's final states, then a 3-way edit classifier."""

    def __init__(self, encoder_dim: int, hidden_dim: int = 100, dropout: float = 0.5):
        super().__init__()
        self.encoder_dim = encoder_dim
        self.fc = nn.Sequential(nn.Linear(encoder_dim, hidden_dim), nn.ReLU(), nn.Dropout(dropout))
        self.out = nn.Linear(hidden_dim, len(EditLabel))

    def forward(self, final: torch.Tensor) -> torch.Tensor:
        """``(batch, encoder_dim)`` -> ``(batch, 3)`` logits."""
        return self.out(self.fc(final))
