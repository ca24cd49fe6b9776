"""Two-view image-matching geometry."""
