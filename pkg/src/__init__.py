"""Source root of the mvcat package."""
