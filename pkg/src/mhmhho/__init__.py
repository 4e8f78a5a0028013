"""MHM and MsHHO multiscale methods on polygonal meshes."""
